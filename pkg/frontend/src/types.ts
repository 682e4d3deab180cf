/** Shared shapes for the catalog, bundles and prediction results. */

export interface PreprocessContract {
  target_size: [number, number]; // [height, width]
  normalize: boolean;
  channel_order: 'RGB';
}

export interface ModelCatalogEntry {
  id: string;
  display_name: string;
  bundle_url: string;
  reported_metrics: Partial<Record<'accuracy' | 'precision' | 'recall' | 'f1', number>>;
  preprocess: PreprocessContract;
}

/** Decoded RGB image: interleaved bytes, row-major. */
export interface RgbImage {
  data: Uint8Array | Uint8ClampedArray;
  width: number;
  height: number;
}

export interface SaliencyMap {
  /** Normalized drop map in [0, 1], row-major gridHeight x gridWidth. */
  values: Float32Array;
  gridHeight: number;
  gridWidth: number;
}

export interface PredictionView {
  label: string;
  probabilities: [number, number];
  elapsedMs: number;
  saliency?: SaliencyMap;
}

export interface BundleInfo {
  labels: [string, string];
  preprocess: PreprocessContract;
  metadata: Record<string, unknown>;
}
