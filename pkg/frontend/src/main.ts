import { App } from "./app.js";

const root = document.getElementById("app");
if (root) {
  // served from the node itself at /ui/, so the origin is the broker
  new App(root, window.location.origin);
}
