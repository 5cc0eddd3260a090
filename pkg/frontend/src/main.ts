/**
 * Browser entry point: wires the socket client, orbit controls, parameter
 * panel and canvas together. Everything testable lives in the imported
 * modules; this file is the thin DOM glue.
 */

import { ViewerClient } from "./client.js";
import { CanvasPresenter } from "./display.js";
import { orbitCamera, orbitForScene, pan, rotate, zoom, type OrbitState } from "./orbit.js";
import { ParamPanel } from "./panel.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id} in index.html`);
  return node as T;
}

function wsUrl(): string {
  const override = new URLSearchParams(location.search).get("ws");
  if (override) return override;
  const host = location.hostname || "127.0.0.1";
  return `ws://${host}:9870/ws`;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const statusEl = el<HTMLElement>("status");
  const qualityEl = el<HTMLElement>("quality");
  const statsEl = el<HTMLElement>("stats");
  const sceneEl = el<HTMLElement>("scene-info");
  const banner = el<HTMLElement>("banner");
  const sceneInput = el<HTMLInputElement>("scene-name");
  const loadButton = el<HTMLButtonElement>("load-scene");

  const presenter = new CanvasPresenter(canvas);
  const client = new ViewerClient(wsUrl());
  const panel = new ParamPanel(el<HTMLElement>("panel"), (fields) => {
    client.sendParams(fields);
  });

  let orbit: OrbitState | null = null;
  let sceneRef: { name?: string; path?: string } = { name: sceneInput.value };

  const pushCamera = () => {
    if (orbit) client.sendCamera(orbitCamera(orbit));
  };

  client.onStatus = (status) => {
    statusEl.textContent = status;
    banner.hidden = status === "open";
    if (status === "open") {
      // After a reconnect the server session is fresh: restore everything.
      client.loadScene(sceneRef);
      client.sendParams(panel.snapshot());
      if (orbit) {
        pushCamera();
      }
      client.requestFrame();
    }
  };

  client.onScene = (msg) => {
    sceneEl.textContent =
      `${msg.scene}  ${msg.dims.join("x")} voxels, ${msg.bins} bins, ` +
      `${msg.segments.toLocaleString()} segments, ` +
      `${(msg.memoryBytes / 1e6).toFixed(1)} MB`;
    if (!orbit) {
      orbit = orbitForScene(msg.dims);
      client.requestFrame();
    }
  };

  client.onStats = (msg) => {
    qualityEl.textContent = msg.quality;
    qualityEl.className = msg.quality === "moving" ? "badge moving" : "badge still";
    statsEl.textContent =
      `frame ${msg.frameId}: ${msg.renderMs.toFixed(0)} ms, ` +
      `${msg.voxelSteps.toLocaleString()} voxel steps, ` +
      `${msg.tests.toLocaleString()} tests`;
  };

  client.onError = (msg) => {
    statsEl.textContent = `server error: ${msg.message}`;
  };

  client.onFrame = (frame) => presenter.present(frame);

  loadButton.addEventListener("click", () => {
    const name = sceneInput.value.trim();
    if (!name) return;
    sceneRef = name.includes("/") ? { path: name } : { name };
    orbit = null;
    client.loadScene(sceneRef);
  });

  let dragging: "rotate" | "pan" | null = null;
  let lastX = 0;
  let lastY = 0;

  canvas.addEventListener("pointerdown", (ev) => {
    if (!orbit) return;
    dragging = ev.button === 2 || ev.shiftKey ? "pan" : "rotate";
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !orbit) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    orbit =
      dragging === "rotate"
        ? rotate(orbit, dx, dy, canvas.clientWidth)
        : pan(orbit, dx, dy, canvas.clientHeight);
    pushCamera();
  });
  const endDrag = (ev: PointerEvent) => {
    if (dragging) canvas.releasePointerCapture(ev.pointerId);
    dragging = null;
  };
  canvas.addEventListener("pointerup", endDrag);
  canvas.addEventListener("pointercancel", endDrag);
  canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
  canvas.addEventListener(
    "wheel",
    (ev) => {
      if (!orbit) return;
      ev.preventDefault();
      orbit = zoom(orbit, ev.deltaY);
      pushCamera();
    },
    { passive: false },
  );

  client.connect();
}

main();
