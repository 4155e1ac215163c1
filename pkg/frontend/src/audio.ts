/**
 * Client-side chord synthesis. Chords arrive from the server as pitch
 * classes (C=1 .. B=12); playback stacks them in root position near middle C
 * and plays simple enveloped triangle tones, so no sample assets are needed.
 */

const A4_HZ = 440;
const A4_MIDI = 69;
const C4_MIDI = 60;

export function midiToFrequency(midi: number): number {
  return A4_HZ * 2 ** ((midi - A4_MIDI) / 12);
}

/**
 * Root-position voicing: the first pitch class sits in the octave of middle
 * C and every later note is lifted by octaves until the stack ascends.
 */
export function voiceChord(pitchClasses: number[]): number[] {
  const midis: number[] = [];
  for (const pc of pitchClasses) {
    if (!Number.isInteger(pc) || pc < 1 || pc > 12) {
      throw new RangeError(`pitch class out of range: ${pc}`);
    }
    let midi = C4_MIDI + (pc - 1);
    const prev = midis[midis.length - 1];
    if (prev !== undefined) {
      while (midi <= prev) midi += 12;
    }
    midis.push(midi);
  }
  return midis;
}

export function chordFrequencies(pitchClasses: number[]): number[] {
  return voiceChord(pitchClasses).map(midiToFrequency);
}

/** The slice of AudioContext the player uses; tests substitute a fake. */
export interface ToneContext {
  currentTime: number;
  destination: AudioNode;
  createOscillator(): OscillatorNode;
  createGain(): GainNode;
  resume(): Promise<void>;
}

export interface PlayOptions {
  seconds?: number;
  gain?: number;
  startAt?: number;
}

export class ChordPlayer {
  private ctx: ToneContext | null = null;

  constructor(private readonly makeContext: () => ToneContext) {}

  /** Browsers gate audio behind a user gesture; create the context lazily. */
  private context(): ToneContext {
    if (this.ctx === null) {
      this.ctx = this.makeContext();
    }
    void this.ctx.resume();
    return this.ctx;
  }

  playChord(pitchClasses: number[], options: PlayOptions = {}): void {
    const ctx = this.context();
    const seconds = options.seconds ?? 0.9;
    const start = options.startAt ?? ctx.currentTime;
    const stop = start + seconds;
    const frequencies = chordFrequencies(pitchClasses);
    // Per-voice gain keeps four-note chords from clipping.
    const peak = (options.gain ?? 0.5) / frequencies.length;
    for (const frequency of frequencies) {
      const osc = ctx.createOscillator();
      const gain = ctx.createGain();
      osc.type = "triangle";
      osc.frequency.setValueAtTime(frequency, start);
      gain.gain.setValueAtTime(0, start);
      gain.gain.linearRampToValueAtTime(peak, start + 0.02);
      gain.gain.exponentialRampToValueAtTime(0.0001, stop);
      osc.connect(gain);
      gain.connect(ctx.destination);
      osc.start(start);
      osc.stop(stop + 0.05);
    }
  }

  /** Play chords back to back; returns the total duration in seconds. */
  playProgression(chords: number[][], secondsPerChord = 0.75): number {
    const ctx = this.context();
    const base = ctx.currentTime;
    chords.forEach((pitchClasses, i) => {
      this.playChord(pitchClasses, {
        seconds: secondsPerChord * 0.95,
        startAt: base + i * secondsPerChord,
      });
    });
    return chords.length * secondsPerChord;
  }
}

export function defaultPlayer(): ChordPlayer {
  return new ChordPlayer(() => new AudioContext());
}
