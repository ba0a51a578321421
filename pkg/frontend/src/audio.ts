/** Microphone capture: mono float samples plus the context's sample rate. */

export interface Recording {
  samplingRate: number;
  samples: number[];
}

export class Recorder {
  private context: AudioContext | null = null;
  private source: MediaStreamAudioSourceNode | null = null;
  private processor: ScriptProcessorNode | null = null;
  private stream: MediaStream | null = null;
  private chunks: Float32Array[] = [];

  get active(): boolean {
    return this.context !== null;
  }

  async start(): Promise<void> {
    if (this.context) return;
    this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    this.context = new AudioContext();
    this.source = this.context.createMediaStreamSource(this.stream);
    // channel 0 only: the service wants mono raw floats
    this.processor = this.context.createScriptProcessor(4096, 1, 1);
    this.chunks = [];
    this.processor.onaudioprocess = (event) => {
      this.chunks.push(new Float32Array(event.inputBuffer.getChannelData(0)));
    };
    this.source.connect(this.processor);
    this.processor.connect(this.context.destination);
  }

  async stop(): Promise<Recording> {
    const context = this.context;
    if (!context) return { samplingRate: 0, samples: [] };
    this.processor?.disconnect();
    this.source?.disconnect();
    this.stream?.getTracks().forEach((track) => track.stop());
    await context.close();
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const samples = new Array<number>(total);
    let offset = 0;
    for (const chunk of this.chunks) {
      for (let i = 0; i < chunk.length; i++) samples[offset++] = chunk[i];
    }
    const samplingRate = context.sampleRate;
    this.context = null;
    this.source = null;
    this.processor = null;
    this.stream = null;
    this.chunks = [];
    return { samplingRate, samples };
  }
}
