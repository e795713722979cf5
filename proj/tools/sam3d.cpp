#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sam3d/app/commands.hpp"

using namespace sam3d::cli;

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation with a frozen 2D slice encoder and a lightweight 3D decoder"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::string shape = "8,64,64";
  std::string log_level = "info";
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--checkpoint", g.checkpoint, "Checkpoint directory");
  app.add_option("--input", g.input, "Input image, manifest or prediction directory");
  app.add_option("--output", g.output, "Output file or directory");
  app.add_option("--cache-dir", g.cache_dir, "Embedding cache directory");
  app.add_option("--threads", g.threads, "Worker threads for the dense kernels")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Force single-threaded, bitwise reproducible execution");
  app.add_option("--isa", g.isa, "Kernel variant")->check(CLI::IsMember({"auto", "scalar", "avx2"}));
  app.add_option("--log-level", log_level, "spdlog level")->check(
      CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the decoder");
  train->add_flag("--resume", train_args.resume, "Resume from --checkpoint or <output>/checkpoint_latest");
  train->add_option("--prefetch", train_args.prefetch, "Sampling queue depth (0 = inline)");
  train->add_option("--stop-after-epoch", train_args.stop_after_epoch, "Stop once this many epochs are done");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Sliding-window prediction to NIfTI label maps");
  predict->add_flag("--probabilities", predict_args.probabilities, "Also write fused probabilities as RVF");

  auto* evaluate = app.add_subcommand("evaluate", "DSC / HD95 report over the manifest");
  auto* extract = app.add_subcommand("extract-embeddings", "Populate the embedding cache");

  CountArgs count_args;
  auto* count = app.add_subcommand("count-params", "Closed-form and allocated decoder parameter counts");
  count->add_option("--modalities", count_args.modalities, "Input modalities (without --config)");
  count->add_option("--classes", count_args.classes, "Output classes (without --config)");

  ToyArgs toy_args;
  auto* toy = app.add_subcommand("make-toy-dataset", "Write a synthetic dataset and manifest");
  toy->add_option("--cases", toy_args.cases, "Number of cases");
  toy->add_option("--shape", shape, "D,H,W");
  toy->add_option("--classes", toy_args.classes, "Classes including background");
  toy->add_option("--seed", toy_args.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }

  try {
    spdlog::set_default_logger(spdlog::stderr_color_mt("sam3d"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    apply_runtime(g);
    nlohmann::json result;
    if (*train) result = cmd_train(g, train_args);
    else if (*predict) result = cmd_predict(g, predict_args);
    else if (*evaluate) result = cmd_evaluate(g);
    else if (*extract) result = cmd_extract_embeddings(g);
    else if (*count) result = cmd_count_params(g, count_args);
    else if (*toy) {
      toy_args.shape = parse_shape(shape);
      result = cmd_make_toy_dataset(g, toy_args);
    }
    std::cout << result.dump() << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << error_line(e) << std::endl;
    return 1;
  }
}
