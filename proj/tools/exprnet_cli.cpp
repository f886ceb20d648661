// exprnet: data preparation, training, evaluation and scoring for the
// seven-expression classifier.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "exprnet/pipeline.hpp"

namespace {

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const char* kind, const std::string& what) {
  std::cerr << "error: " << kind << ": " << one_line(what) << "\n";
  return 1;
}

template <typename T>
std::optional<T> flag_value(const CLI::Option* opt, const T& value) {
  return opt->count() ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Facial expression classification pipeline"};
  app.require_subcommand(1);

  exprnet::PrepareOptions prep;
  std::string prep_config;
  std::uint64_t prep_seed = 0;
  auto* prepare = app.add_subcommand("prepare", "Build train/validation manifests from frames and annotations");
  prepare->add_option("--images", prep.images, "Root of per-video frame directories")->required();
  prepare->add_option("--annotations", prep.annotations, "Directory of per-video label files")->required();
  prepare->add_option("--out", prep.out, "Output directory")->required();
  auto* prep_config_opt = prepare->add_option("--config", prep_config, "Pipeline config file");
  auto* prep_seed_opt = prepare->add_option("--seed", prep_seed, "Seed for splitting and resampling");

  exprnet::TrainOptions train;
  std::string train_config, init_weights, head_policy = "strict";
  std::int64_t epochs = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  train_cmd->add_option("--manifest", train.manifest, "Training manifest CSV")->required();
  train_cmd->add_option("--val-manifest", train.val_manifest, "Validation manifest CSV")->required();
  auto* train_config_opt = train_cmd->add_option("--config", train_config, "Pipeline config file");
  auto* init_opt = train_cmd->add_option("--init-weights", init_weights, "EXPR1 checkpoint to start from");
  train_cmd->add_option("--head-policy", head_policy, "strict or reinit_head")
      ->check(CLI::IsMember({"strict", "reinit_head"}));
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Override train.epochs");

  exprnet::EvaluateOptions eval;
  std::string eval_config;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a labelled manifest");
  eval_cmd->add_option("--manifest", eval.manifest, "Manifest CSV")->required();
  eval_cmd->add_option("--weights", eval.weights, "EXPR1 checkpoint")->required();
  auto* eval_config_opt = eval_cmd->add_option("--config", eval_config, "Pipeline config file");
  eval_cmd->add_option("--report", eval.report, "Report path (a .json sibling is written too)")->required();

  exprnet::PredictOptions pred;
  std::string pred_config;
  auto* pred_cmd = app.add_subcommand("predict", "Predict every image under a directory");
  pred_cmd->add_option("--images", pred.images, "Image directory")->required();
  pred_cmd->add_option("--weights", pred.weights, "EXPR1 checkpoint")->required();
  auto* pred_config_opt = pred_cmd->add_option("--config", pred_config, "Pipeline config file");
  pred_cmd->add_option("--out", pred.out, "Predictions CSV")->required();

  exprnet::ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Score a predictions CSV against labels");
  score_cmd->add_option("--predictions", score.predictions, "Predictions CSV")->required();
  score_cmd->add_option("--labels", score.labels, "CSV with path and label columns")->required();
  score_cmd->add_option("--report", score.report, "Report path (a .json sibling is written too)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*prepare) {
      prep.config = flag_value<std::filesystem::path>(prep_config_opt, prep_config);
      prep.seed = flag_value(prep_seed_opt, prep_seed);
      exprnet::cmd_prepare(prep);
    } else if (*train_cmd) {
      train.config = flag_value<std::filesystem::path>(train_config_opt, train_config);
      train.init_weights = flag_value<std::filesystem::path>(init_opt, init_weights);
      train.head_policy = exprnet::parse_head_policy(head_policy);
      train.epochs = flag_value(epochs_opt, epochs);
      exprnet::cmd_train(train);
    } else if (*eval_cmd) {
      eval.config = flag_value<std::filesystem::path>(eval_config_opt, eval_config);
      std::cout << exprnet::format_report_text(exprnet::cmd_evaluate(eval));
    } else if (*pred_cmd) {
      pred.config = flag_value<std::filesystem::path>(pred_config_opt, pred_config);
      exprnet::cmd_predict(pred);
    } else if (*score_cmd) {
      exprnet::cmd_score(score, std::cout);
    }
  } catch (const exprnet::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("IoError", e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
  return 0;
}
