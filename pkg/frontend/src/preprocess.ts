/**
 * Image standardization mirroring the training pipeline bit for bit:
 * bilinear resize with half-pixel-center sampling and edge clamping
 * (src = (dst + 0.5) * (in / out) - 0.5), then scale to [0, 1].
 */

import type { PreprocessContract, RgbImage } from './types';

/** Drop the alpha channel of canvas ImageData-style RGBA bytes. */
export function rgbaToRgb(data: Uint8ClampedArray | Uint8Array, width: number, height: number): RgbImage {
  const out = new Uint8Array(width * height * 3);
  for (let i = 0, j = 0; i < width * height; i++, j += 4) {
    out[i * 3] = data[j];
    out[i * 3 + 1] = data[j + 1];
    out[i * 3 + 2] = data[j + 2];
  }
  return { data: out, width, height };
}

/** Bilinear resize of interleaved RGB to (targetHeight, targetWidth), float32 output. */
export function resizeBilinear(image: RgbImage, targetHeight: number, targetWidth: number): Float32Array {
  const { data, width, height } = image;
  const out = new Float32Array(targetHeight * targetWidth * 3);
  if (width === targetWidth && height === targetHeight) {
    for (let i = 0; i < out.length; i++) out[i] = data[i];
    return out;
  }
  const scaleY = height / targetHeight;
  const scaleX = width / targetWidth;
  for (let ty = 0; ty < targetHeight; ty++) {
    let sy = (ty + 0.5) * scaleY - 0.5;
    if (sy < 0) sy = 0;
    if (sy > height - 1) sy = height - 1;
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, height - 1);
    const wy = sy - y0;
    for (let tx = 0; tx < targetWidth; tx++) {
      let sx = (tx + 0.5) * scaleX - 0.5;
      if (sx < 0) sx = 0;
      if (sx > width - 1) sx = width - 1;
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, width - 1);
      const wx = sx - x0;
      const o = (ty * targetWidth + tx) * 3;
      for (let c = 0; c < 3; c++) {
        const tl = data[(y0 * width + x0) * 3 + c];
        const tr = data[(y0 * width + x1) * 3 + c];
        const bl = data[(y1 * width + x0) * 3 + c];
        const br = data[(y1 * width + x1) * 3 + c];
        const top = tl * (1 - wx) + tr * wx;
        const bot = bl * (1 - wx) + br * wx;
        out[o + c] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

/** Resize + unit-range scaling per the bundle's preprocessing contract. */
export function standardize(image: RgbImage, contract: PreprocessContract): Float32Array {
  const [th, tw] = contract.target_size;
  const resized = resizeBilinear(image, th, tw);
  if (contract.normalize) {
    for (let i = 0; i < resized.length; i++) resized[i] /= 255.0;
  }
  return resized;
}
