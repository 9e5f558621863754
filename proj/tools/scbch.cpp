// scbch: generate, train, eval, sweep and diagnose from one config file.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scbch/scbch.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kIo = 3,
  kNumerical = 4,
  kRuntime = 5,
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

struct TrainFlags {
  std::vector<std::string> ablate;
  std::optional<double> noise_rate;
  std::optional<std::size_t> code_length;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> map_at;
};

scbch::ExperimentConfig resolve(const Globals& g, const std::string& data, const TrainFlags& t) {
  scbch::ExperimentConfig c = g.config.empty() ? scbch::ExperimentConfig{} : scbch::load_config(g.config);
  if (g.seed) scbch::set_all_seeds(c, *g.seed);
  if (!g.out.empty()) c.output_dir = g.out;
  if (!data.empty()) c.dataset = data;
  for (const auto& a : t.ablate) scbch::apply_ablation(c.train.ablation, a);
  if (t.noise_rate) c.noise.rate = *t.noise_rate;
  if (t.code_length) c.train.model.code_length = *t.code_length;
  if (t.epochs) c.train.epochs = *t.epochs;
  if (t.map_at) c.eval.map_at = *t.map_at;
  c.validate();
  return c;
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--ablate", t.ablate, "Disable a component: cscc, bsch, weighting, attraction")
      ->check(CLI::IsMember({"cscc", "bsch", "weighting", "attraction", "none"}));
  cmd->add_option("--noise-rate", t.noise_rate, "Symmetric label-noise rate in [0,1]");
  cmd->add_option("--code-length", t.code_length, "Hash code length in bits");
  cmd->add_option("--epochs", t.epochs, "Number of training epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-robust cross-modal hashing"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON experiment config");
  app.add_option("--seed", g.seed, "Set every seed in the config");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::string data, checkpoint, format = "auto", target;
  TrainFlags tflags;

  auto* gen = app.add_subcommand("generate", "Write a synthetic feature file");
  gen->add_option("path", target, "Output file (default <out>/dataset.txt)");
  gen->add_option("--format", format, "text, binary or auto (by extension)")
      ->check(CLI::IsMember({"text", "binary", "auto"}));

  auto* trn = app.add_subcommand("train", "Train and write checkpoint and logs");
  trn->add_option("--data", data, "Feature file");
  add_train_flags(trn, tflags);
  trn->add_option("--map-at", tflags.map_at, "MAP cutoff for per-epoch tracking (0 = all)");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  evl->add_option("--data", data, "Feature file");
  evl->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evl->add_option("--map-at", tflags.map_at, "MAP cutoff (0 = all)");
  std::string pr_mode;
  evl->add_option("--pr-mode", pr_mode, "rank or radius")->check(CLI::IsMember({"rank", "radius"}));

  scbch::SweepAxes axes;
  std::size_t jobs = 1;
  auto* swp = app.add_subcommand("sweep", "Run a grid of train+eval cells");
  swp->add_option("--data", data, "Feature file");
  swp->add_option("--noise-rates", axes.noise_rates, "Noise-rate axis")->delimiter(',');
  swp->add_option("--code-lengths", axes.code_lengths, "Code-length axis")->delimiter(',');
  swp->add_option("--ablations", axes.ablations, "Ablation axis (names or none)")->delimiter(',');
  swp->add_option("--xis", axes.xis, "xi axis")->delimiter(',');
  swp->add_option("--margins", axes.margins, "Margin axis")->delimiter(',');
  swp->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  add_train_flags(swp, tflags);

  std::optional<std::size_t> samples;
  auto* dia = app.add_subcommand("diagnose", "Dump label and code similarity matrices");
  dia->add_option("--data", data, "Feature file");
  dia->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dia->add_option("--samples", samples, "Subset size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  std::ostream* log = g.quiet ? nullptr : &std::cout;
  try {
    scbch::ExperimentConfig c = resolve(g, data, tflags);
    if (*gen) {
      const auto fmt = format == "text"     ? scbch::FeatureFormat::text
                       : format == "binary" ? scbch::FeatureFormat::binary
                                            : scbch::FeatureFormat::automatic;
      scbch::cmd_generate(c, target, fmt, log);
    } else if (*trn) {
      scbch::cmd_train(c, log);
    } else if (*evl) {
      if (!pr_mode.empty()) c.eval.pr_mode = pr_mode == "radius" ? scbch::PrMode::radius : scbch::PrMode::rank;
      scbch::cmd_eval(c, checkpoint, log);
    } else if (*swp) {
      const auto cells = scbch::cmd_sweep(c, axes, jobs, log);
      std::size_t failed = 0;
      for (const auto& cell : cells) failed += cell.status != "ok";
      if (log) *log << cells.size() << " cells, " << failed << " failed\n";
    } else if (*dia) {
      if (samples) c.diagnose.sample_count = *samples;
      c.validate();
      scbch::cmd_diagnose(c, checkpoint, log);
    }
  } catch (const scbch::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const scbch::SpecError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const scbch::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const scbch::ParseError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const scbch::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const scbch::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kOk;
}
