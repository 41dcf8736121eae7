/**
 * Typed client for the miq3d prediction service.
 *
 * All endpoints are read-only; the server never mutates state, so every
 * call here is safely repeatable.
 */

export interface VolumeInfo {
  id: string;
  shape: [number, number, number];
  n_instances: number;
}

export interface SlicePayload {
  shape: [number, number];
  /** base64 of row-major u8 grayscale */
  data: string;
}

export interface InstancePayload {
  score: number;
  /** [start, len, start, len, ...] over row-major voxel order */
  rle: number[];
}

export interface GateSlicePayload {
  axis: number;
  index: number;
  shape: [number, number];
  data: string;
}

export interface PredictResponse {
  instances: InstancePayload[];
  gate_slice?: GateSlicePayload;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class Client {
  constructor(private baseUrl: string = "") {}

  async health(): Promise<{ status: string }> {
    return expectJson(await fetch(`${this.baseUrl}/api/health`));
  }

  async volumes(): Promise<VolumeInfo[]> {
    return expectJson(await fetch(`${this.baseUrl}/api/volumes`));
  }

  async slice(volumeId: string, axis: number, index: number): Promise<SlicePayload> {
    const url = `${this.baseUrl}/api/volumes/${encodeURIComponent(volumeId)}/slice?axis=${axis}&index=${index}`;
    return expectJson(await fetch(url));
  }

  async predict(volumeId: string, point: [number, number, number]): Promise<PredictResponse> {
    const response = await fetch(`${this.baseUrl}/api/predict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ volume_id: volumeId, point }),
    });
    return expectJson(response);
  }
}

/** Decode a base64 u8 payload without relying on Node Buffers. */
export function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(data);
    const out = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
    return out;
  }
  // Node (vitest) path.
  return new Uint8Array(Buffer.from(data, "base64"));
}
