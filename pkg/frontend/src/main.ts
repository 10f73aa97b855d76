import { ReviewApi } from "./api.js";
import { ReviewApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const api = new ReviewApi(window.fetch.bind(window));
  void new ReviewApp(root, api).start();
}
