/**
 * Retry queue for annotation submissions. Network failures and 5xx keep the
 * record queued for a later flush; 409 means the record is already on disk
 * and counts as delivered; other 4xx are malformed payloads that retrying
 * cannot fix, so they are dropped and reported.
 */

import { AnnotationRecord, ApiError, SubmitOutcome } from "./api";

export type Sender = (record: AnnotationRecord) => Promise<SubmitOutcome>;

export interface FlushReport {
  delivered: number;
  rejected: AnnotationRecord[];
  pending: number;
}

export class RetryQueue {
  private items: AnnotationRecord[] = [];

  constructor(private readonly send: Sender) {}

  get size(): number {
    return this.items.length;
  }

  enqueue(record: AnnotationRecord): void {
    this.items.push(record);
  }

  /**
   * Attempt every queued record once, in order. Stops early on the first
   * retryable failure since later sends would very likely fail the same way.
   */
  async flush(): Promise<FlushReport> {
    const report: FlushReport = { delivered: 0, rejected: [], pending: 0 };
    while (this.items.length > 0) {
      const record = this.items[0] as AnnotationRecord;
      try {
        await this.send(record);
        report.delivered += 1;
      } catch (err) {
        if (err instanceof ApiError && err.status >= 400 && err.status < 500) {
          report.rejected.push(record);
        } else {
          break;
        }
      }
      this.items.shift();
    }
    report.pending = this.items.length;
    return report;
  }
}
