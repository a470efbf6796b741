import { ModelInfo, PredictRequest, PredictResponse } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(message: string, readonly status: number | null) {
    super(message);
  }
}

/** Thin client for the prediction service; fetch is injectable for tests. */
export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async health(): Promise<{ status: string; model_loaded: boolean }> {
    return this.getJson("/health");
  }

  async modelInfo(): Promise<ModelInfo> {
    return this.getJson("/model");
  }

  async predict(request: PredictRequest): Promise<PredictResponse> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + "/predict", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
      });
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`, null);
    }
    if (!response.ok) {
      const detail = await response.text();
      throw new ServiceError(`predict failed (${response.status}): ${detail}`, response.status);
    }
    return (await response.json()) as PredictResponse;
  }

  private async getJson<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path);
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`, null);
    }
    if (!response.ok) {
      throw new ServiceError(`${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }
}
