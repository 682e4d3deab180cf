/**
 * Bundle loading and inference on top of the tfjs layers runtime. Models
 * are fetched lazily and cached in memory after first use; everything runs
 * from static files with no backend.
 */

import * as tf from '@tensorflow/tfjs';

import type { BundleInfo, ModelCatalogEntry, PreprocessContract, RgbImage } from './types';
import { standardize } from './preprocess';

export interface Predictor {
  inputHeight: number;
  inputWidth: number;
  /** Class probabilities for `count` standardized images packed in `batch`. */
  predictBatch(batch: Float32Array, count: number): Promise<Float32Array>;
}

export class LoadedModel implements Predictor {
  constructor(
    readonly entry: ModelCatalogEntry,
    readonly info: BundleInfo,
    private readonly model: tf.LayersModel,
  ) {}

  get inputHeight(): number {
    return this.info.preprocess.target_size[0];
  }

  get inputWidth(): number {
    return this.info.preprocess.target_size[1];
  }

  get contract(): PreprocessContract {
    return this.info.preprocess;
  }

  async predictBatch(batch: Float32Array, count: number): Promise<Float32Array> {
    const h = this.inputHeight;
    const w = this.inputWidth;
    const output = tf.tidy(() => {
      const x = tf.tensor4d(batch, [count, h, w, 3]);
      return this.model.predict(x, { batchSize: count }) as tf.Tensor2D;
    });
    try {
      return new Float32Array(await output.data());
    } finally {
      output.dispose();
    }
  }

  /** Standardize one decoded image and return its class probabilities. */
  async predictImage(image: RgbImage): Promise<{ probabilities: [number, number]; input: Float32Array }> {
    const input = standardize(image, this.contract);
    const probs = await this.predictBatch(input, 1);
    return { probabilities: [probs[0], probs[1]], input };
  }
}

const cache = new Map<string, Promise<LoadedModel>>();

async function fetchBundle(entry: ModelCatalogEntry, baseUrl: string): Promise<LoadedModel> {
  const bundleUrl = new URL(`${entry.bundle_url}/`, baseUrl);
  const infoResponse = await fetch(new URL('bundle.json', bundleUrl));
  if (!infoResponse.ok) throw new Error(`bundle.json fetch failed: HTTP ${infoResponse.status}`);
  const info = (await infoResponse.json()) as BundleInfo;
  const model = await tf.loadLayersModel(new URL('model.json', bundleUrl).toString());
  return new LoadedModel(entry, info, model);
}

/** Lazy, cached model loading; concurrent callers share one fetch. */
export function loadModel(entry: ModelCatalogEntry, baseUrl: string): Promise<LoadedModel> {
  let pending = cache.get(entry.id);
  if (!pending) {
    pending = fetchBundle(entry, baseUrl).catch((err) => {
      cache.delete(entry.id); // allow retry after a failed fetch
      throw err;
    });
    cache.set(entry.id, pending);
  }
  return pending;
}

export function clearModelCache(): void {
  cache.clear();
}
