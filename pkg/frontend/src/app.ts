/** Browser entry point: enhance the server-rendered page in place. */

import { enhance } from "./dom.js";

if (typeof document !== "undefined" && typeof fetch !== "undefined") {
  const run = () => void enhance(document, fetch.bind(globalThis));
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", run);
  } else {
    run();
  }
}

export { enhance };
