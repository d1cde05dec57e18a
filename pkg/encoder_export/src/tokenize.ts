/** Whitespace tokenization with a hard cap, applied before encoding. */

export function truncateTokens(text: string, maxTokens: number): string {
  const tokens = text.split(/\s+/).filter((t) => t.length > 0)
  if (tokens.length <= maxTokens) return tokens.join(' ')
  return tokens.slice(0, maxTokens).join(' ')
}
