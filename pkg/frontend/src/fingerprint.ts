/** Canonical fingerprint of an accepted-name set.
 *
 * Responses are applied only when the fingerprint they were requested under
 * still matches the store's current accepted-set, so answers for superseded
 * states are discarded no matter how late they arrive.
 */
export function acceptedFingerprint(accepted: Record<string, string>): string {
  const keys = Object.keys(accepted).sort();
  return JSON.stringify(keys.map((k) => [k, accepted[k]]));
}
