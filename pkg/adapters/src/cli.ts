import yargs, { type Argv } from "yargs";
import { hideBin } from "yargs/helpers";

import { SerialQueue } from "./queue.js";
import {
  CommandBridge,
  CommandChatRunner,
  CommandDetectRunner,
  CommandEmbedRunner,
  StubChatRunner,
  StubDetectRunner,
  StubEmbedRunner,
  parseModelSpec,
} from "./runners.js";
import { chatApp, detectApp, embedApp } from "./server.js";

function commonOptions(y: Argv) {
  return y
    .option("model", {
      type: "string",
      default: "stub",
      describe: 'model spec: "stub" or "cmd:<program>"',
    })
    .option("port", { type: "number", default: 0, describe: "listen port (0 = ephemeral)" })
    .option("device", {
      type: "string",
      default: "cpu",
      describe: "device hint passed to the model process",
    })
    .option("max-queue", {
      type: "number",
      default: 8,
      describe: "max waiting requests before 429",
    });
}

function listen(app: ReturnType<typeof chatApp>, port: number, what: string): void {
  const server = app.listen(port, () => {
    const addr = server.address();
    const boundPort = typeof addr === "object" && addr ? addr.port : port;
    console.log(`${what} adapter listening on :${boundPort}`);
  });
}

void yargs(hideBin(process.argv))
  .scriptName("vqrag-adapters")
  .command(
    "chat",
    "serve /v1/chat wrapping a multimodal LMM",
    (y) => commonOptions(y),
    (argv) => {
      const spec = parseModelSpec(argv.model);
      const runner =
        spec.kind === "stub"
          ? new StubChatRunner()
          : new CommandChatRunner(new CommandBridge(spec.program, argv.device), argv.model);
      listen(chatApp(runner, new SerialQueue(argv["max-queue"])), argv.port, "chat");
    },
  )
  .command(
    "embed",
    "serve /v1/embed wrapping a dense text encoder",
    (y) => commonOptions(y).option("dim", { type: "number", default: 768, describe: "embedding dim" }),
    (argv) => {
      const spec = parseModelSpec(argv.model);
      const runner =
        spec.kind === "stub"
          ? new StubEmbedRunner(argv.dim)
          : new CommandEmbedRunner(new CommandBridge(spec.program, argv.device), argv.model, argv.dim);
      listen(embedApp(runner, new SerialQueue(argv["max-queue"])), argv.port, "embed");
    },
  )
  .command(
    "detect",
    "serve /v1/detect wrapping a prompt-driven detector",
    (y) =>
      commonOptions(y).option("fixtures", {
        type: "string",
        describe: "stub only: JSON file of recorded boxes to replay",
      }),
    (argv) => {
      const spec = parseModelSpec(argv.model);
      const runner =
        spec.kind === "stub"
          ? new StubDetectRunner(argv.fixtures)
          : new CommandDetectRunner(new CommandBridge(spec.program, argv.device), argv.model);
      listen(detectApp(runner, new SerialQueue(argv["max-queue"])), argv.port, "detect");
    },
  )
  .demandCommand(1)
  .strict()
  .help()
  .parse();
