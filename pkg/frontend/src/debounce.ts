// Debounce for text edits: typing reschedules the commit, Enter flushes it
// immediately so the user is never left waiting on the timer.

export interface Debounced<T extends (...args: any[]) => void> {
  (...args: Parameters<T>): void;
  flush(): void;
  cancel(): void;
}

export function debounce<T extends (...args: any[]) => void>(fn: T, ms = 300): Debounced<T> {
  let handle: ReturnType<typeof setTimeout> | undefined;
  let pending: Parameters<T> | undefined;

  const run = (...args: Parameters<T>) => {
    pending = args;
    if (handle !== undefined) clearTimeout(handle);
    handle = setTimeout(() => {
      handle = undefined;
      const args = pending!;
      pending = undefined;
      fn(...args);
    }, ms);
  };
  run.flush = () => {
    if (handle === undefined) return;
    clearTimeout(handle);
    handle = undefined;
    const args = pending!;
    pending = undefined;
    fn(...args);
  };
  run.cancel = () => {
    if (handle !== undefined) clearTimeout(handle);
    handle = undefined;
    pending = undefined;
  };
  return run;
}
