from dotenv import load_dotenv
import typer

from app.commands import stages
from app.commands.generate import generate
from app.commands.pipeline import pipeline
from app.commands.serve_mock import serve_mock

load_dotenv()

app = typer.Typer(
    name="motion-reason",
    help="Text-to-motion generation with chain-of-thought reasoning and group-relative policy optimization.",
    no_args_is_help=True,
    add_completion=False,
    pretty_exceptions_enable=False,
)

# Stage commands
app.command("datagen")(stages.datagen)
app.command("tokenizer-train")(stages.tokenizer_train)
app.command("encoders-train")(stages.encoders_train)
app.command("cot-build")(stages.cot_build)
app.command("sft")(stages.sft)
app.command("grpo")(stages.grpo)
app.command("eval")(stages.evaluate)
app.command("ablation")(stages.ablation)

# Whole pipeline and inference
app.command("pipeline")(pipeline)
app.command("generate")(generate)
app.command("serve-mock")(serve_mock)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
