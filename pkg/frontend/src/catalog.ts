/**
 * Model catalog loading. Malformed entries are skipped with a console
 * diagnostic so one broken deployment line cannot take down the page.
 */

import type { ModelCatalogEntry } from './types';

function validEntry(raw: unknown): raw is ModelCatalogEntry {
  if (typeof raw !== 'object' || raw === null) return false;
  const e = raw as Record<string, unknown>;
  if (typeof e.id !== 'string' || e.id.length === 0) return false;
  if (typeof e.bundle_url !== 'string' || e.bundle_url.length === 0) return false;
  if (typeof e.display_name !== 'string') return false;
  const pre = e.preprocess as Record<string, unknown> | undefined;
  if (!pre || !Array.isArray(pre.target_size) || pre.target_size.length !== 2) return false;
  if (!(pre.target_size as unknown[]).every((v) => typeof v === 'number' && v >= 1)) return false;
  if (typeof pre.normalize !== 'boolean') return false;
  const metrics = e.reported_metrics as Record<string, unknown> | undefined;
  if (metrics) {
    for (const value of Object.values(metrics)) {
      if (typeof value !== 'number' || value < 0 || value > 1) return false;
    }
  }
  return true;
}

export function parseCatalog(doc: unknown): ModelCatalogEntry[] {
  if (typeof doc !== 'object' || doc === null || !Array.isArray((doc as { models?: unknown }).models)) {
    throw new Error('catalog has no models array');
  }
  const entries: ModelCatalogEntry[] = [];
  for (const raw of (doc as { models: unknown[] }).models) {
    if (validEntry(raw)) {
      entries.push(raw);
    } else {
      console.warn('skipping malformed catalog entry', raw);
    }
  }
  return entries;
}

export async function loadCatalog(url: string): Promise<ModelCatalogEntry[]> {
  const response = await fetch(url);
  if (!response.ok) throw new Error(`catalog fetch failed: HTTP ${response.status}`);
  return parseCatalog(await response.json());
}
