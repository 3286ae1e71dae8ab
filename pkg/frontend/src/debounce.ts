/** Debounce interval for the strength slider: bounds the service to at most
 * ten requests per second while scrubbing. */
export const DEBOUNCE_MS = 100;

export type Debounced<A extends unknown[]> = ((...args: A) => void) & {
  /** Drop any pending call. */
  cancel(): void;
  /** Run any pending call immediately. */
  flush(): void;
};

/**
 * Delays `fn` until `delayMs` after the most recent call; rapid call bursts
 * coalesce into a single invocation with the last arguments.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number = DEBOUNCE_MS,
): Debounced<A> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pending: A | null = null;

  const fire = () => {
    timer = null;
    if (pending !== null) {
      const args = pending;
      pending = null;
      fn(...args);
    }
  };

  const debounced = ((...args: A) => {
    pending = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(fire, delayMs);
  }) as Debounced<A>;

  debounced.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pending = null;
  };

  debounced.flush = () => {
    if (timer !== null) clearTimeout(timer);
    fire();
  };

  return debounced;
}
