/**
 * Canvas presentation for decoded frames.
 *
 * Raw frames arrive as tightly packed RGBA8 rows; PNG stills go through the
 * browser's own decoder via Blob + createImageBitmap. Either way the result
 * is stretched onto the canvas, which keeps its CSS size regardless of the
 * server resolution (moving frames render at half width).
 */

import { FORMAT_PNG, FORMAT_RAW, type FrameMessage } from "./protocol.js";

export class CanvasPresenter {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
  }

  async present(frame: FrameMessage): Promise<void> {
    let bitmap: ImageBitmap;
    try {
      bitmap = await this.decode(frame);
    } catch (err) {
      console.warn(`dropping frame ${frame.frameId}:`, err);
      return;
    }
    try {
      this.ctx.imageSmoothingEnabled = true;
      this.ctx.drawImage(bitmap, 0, 0, this.canvas.width, this.canvas.height);
    } finally {
      bitmap.close();
    }
  }

  private decode(frame: FrameMessage): Promise<ImageBitmap> {
    if (frame.format === FORMAT_RAW) {
      // copy so the ImageData owns a plain ArrayBuffer of exactly this frame
      const pixels = new Uint8ClampedArray(frame.payload);
      const image = new ImageData(pixels, frame.width, frame.height);
      return createImageBitmap(image);
    }
    if (frame.format === FORMAT_PNG) {
      const copy = new Uint8Array(frame.payload);
      const blob = new Blob([copy.buffer as ArrayBuffer], { type: "image/png" });
      return createImageBitmap(blob);
    }
    return Promise.reject(new Error(`unknown frame format ${frame.format}`));
  }
}
