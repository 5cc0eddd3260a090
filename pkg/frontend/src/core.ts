/**
 * DOM-free surface of the viewer, bundled separately so tooling (and the
 * protocol e2e runner under node) can exercise the same code the browser
 * build ships.
 */

export * from "./protocol.js";
export * from "./frameFilter.js";
export * from "./throttle.js";
export * from "./orbit.js";
export * from "./client.js";
