// Command-line driver: train / evaluate / attack / check / sweep-m.
// Exit codes: 0 success, 1 check or runtime failure, 2 config or usage error.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "robattr/checkpoint.hpp"
#include "robattr/checks.hpp"
#include "robattr/evaluate.hpp"
#include "robattr/train.hpp"

namespace fs = std::filesystem;
using namespace robattr;

namespace {

struct Overrides {
  int64_t seed = -1;
  std::string out;
  int threads = 0;
  int m_gradient = 0;
  int m_attack = 0;
  double epsilon = -1.0;

  void apply(ExperimentConfig& cfg) const {
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out.empty()) cfg.out = out;
    if (threads > 0) cfg.threads = threads;
    if (m_gradient > 0) cfg.objective.path.m = m_gradient;
    if (m_attack > 0) {
      cfg.attack.m_attack = m_attack;
      cfg.ifia.m_attack = m_attack;
    }
    if (epsilon >= 0.0) {
      cfg.objective.nbhd.epsilon = epsilon;
      cfg.attack.epsilon = epsilon;
      cfg.ifia.epsilon = epsilon;
    }
  }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "override the config seed");
  cmd->add_option("--out", ov.out, "override the output directory");
  cmd->add_option("--threads", ov.threads, "override worker thread count");
  cmd->add_option("--m-gradient", ov.m_gradient, "override IG segments in the gradient step");
  cmd->add_option("--m-attack", ov.m_attack, "override IG segments in the attack step");
  cmd->add_option("--epsilon", ov.epsilon, "override the perturbation budget");
}

int run_train(const std::string& config_path, const Overrides& ov) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  ov.apply(cfg);
  fs::create_directories(cfg.out);
  Dataset trainset = cfg.load_split(true);
  std::cout << "training " << variant_name(cfg.objective.variant) << " on "
            << trainset.size() << " samples, " << cfg.train.steps
            << " steps\n";
  TrainResult result = train_model(cfg, trainset,
                                   (fs::path(cfg.out) / "diverged.atrg").string(),
                                   &std::cout);
  const std::string ckpt = (fs::path(cfg.out) / "checkpoint.atrg").string();
  save_checkpoint(result.net, ckpt);
  write_text_file((fs::path(cfg.out) / "train_log.csv").string(),
                  train_log_to_csv(result.log));
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

int run_evaluate(const std::string& config_path, const std::string& ckpt,
                 const Overrides& ov) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  ov.apply(cfg);
  fs::create_directories(cfg.out);
  Network net = cfg.make_network();
  load_checkpoint(net, ckpt);
  Dataset testset = cfg.load_split(false);
  EvalReport report = evaluate(net, testset, cfg.eval_config());
  write_text_file((fs::path(cfg.out) / "report.json").string(),
                  report_to_json(report));
  write_text_file((fs::path(cfg.out) / "per_sample.csv").string(),
                  report_to_csv(report));
  std::cout << "nat_acc " << report.nat_acc << " adv_acc " << report.adv_acc
            << " topk_inter " << report.topk_inter << " kendall "
            << report.kendall << "\n";
  return 0;
}

int run_attack(const std::string& config_path, const std::string& ckpt,
               const Overrides& ov, int saliency_count) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  ov.apply(cfg);
  fs::create_directories(cfg.out);
  const fs::path saldir = fs::path(cfg.out) / "saliency";
  fs::create_directories(saldir);
  Network net = cfg.make_network();
  load_checkpoint(net, ckpt);
  Dataset testset = cfg.load_split(false);

  // correctly classified samples only
  std::vector<int64_t> all(static_cast<size_t>(testset.size()));
  for (int64_t i = 0; i < testset.size(); ++i) all[static_cast<size_t>(i)] = i;
  Batch full = testset.batch(all);
  std::vector<int> pred;
  {
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    pred = predict_classes(net.forward(tape, tape.constant(full.x), bound).value());
  }
  std::ostringstream csv;
  csv << "index,label,kendall,topk_inter\n";
  const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(
      static_cast<double>(testset.dim()))));
  const bool square = side * side == testset.dim();
  int written = 0;
  for (int64_t i = 0; i < testset.size(); ++i) {
    if (pred[static_cast<size_t>(i)] != testset.samples[static_cast<size_t>(i)].y)
      continue;
    const Sample& s = testset.samples[static_cast<size_t>(i)];
    IfiaResult res = ifia_topk(net, s.x, s.y, cfg.ifia, cfg.importance,
                               cfg.objective.loss, cfg.seed,
                               static_cast<uint64_t>(i));
    csv << i << "," << s.y << "," << detail::fmt_double(res.kendall) << ","
        << detail::fmt_double(res.topk_inter) << "\n";
    if (square && written < saliency_count) {
      // |IG| maps at the metric resolution for the clean and perturbed inputs
      Tape tape;
      Network::Bound bound = net.bind(tape, false);
      auto importance = [&](const Tensor& at) {
        Batch one;
        one.x = Tensor(Shape{1, testset.dim()},
                       std::vector<double>(at.data(), at.data() + at.numel()));
        one.y = {s.y};
        Node zero = tape.constant(Tensor::zeros(one.x.shape()));
        AttributionMap m = ig_input_loss(
            tape, net, bound, one.y, cfg.objective.loss, zero,
            tape.constant(one.x),
            PathSpec{PathSpec::Kind::straightline, cfg.ifia.m_metrics});
        Tensor flat(Shape{testset.dim()});
        for (int64_t p = 0; p < testset.dim(); ++p)
          flat[p] = std::fabs(m.scores.value()[p]);
        return flat;
      };
      const std::string base = (saldir / std::to_string(i)).string();
      write_saliency_pgm(base + "_clean.pgm", importance(s.x), side, side);
      write_saliency_pgm(base + "_perturbed.pgm", importance(res.x_pert), side, side);
      ++written;
    }
  }
  write_text_file((fs::path(cfg.out) / "ifia_per_sample.csv").string(), csv.str());
  std::cout << "wrote " << (fs::path(cfg.out) / "ifia_per_sample.csv").string()
            << " and " << written << " saliency pairs\n";
  return 0;
}

int run_check() {
  std::vector<CheckResult> results = run_verification_suites(&std::cout);
  for (const CheckResult& r : results)
    if (!r.pass) return 1;
  std::cout << "all " << results.size() << " verification suites passed\n";
  return 0;
}

int run_sweep(const std::string& config_path, const Overrides& ov,
              std::vector<int> m_values) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
  ov.apply(cfg);
  fs::create_directories(cfg.out);
  if (m_values.empty()) m_values = {2, 8, 32};
  Dataset trainset = cfg.load_split(true);
  Dataset testset = cfg.load_split(false);
  std::vector<MSweepRow> rows =
      run_m_sweep(cfg, m_values, trainset, testset, &std::cout);
  const std::string csv = msweep_to_csv(rows);
  write_text_file((fs::path(cfg.out) / "msweep.csv").string(), csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust attribution training toolkit"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path, checkpoint_path;
  std::vector<int> m_values;
  int saliency_count = 8;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("config", config_path, "experiment config JSON")->required();
  add_override_flags(train_cmd, ov);

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_cmd->add_option("config", config_path, "experiment config JSON")->required();
  eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint path")->required();
  add_override_flags(eval_cmd, ov);

  CLI::App* attack_cmd = app.add_subcommand(
      "attack", "run the feature-importance attack and export saliency maps");
  attack_cmd->add_option("config", config_path, "experiment config JSON")->required();
  attack_cmd->add_option("checkpoint", checkpoint_path, "checkpoint path")->required();
  attack_cmd->add_option("--saliency-count", saliency_count,
                         "saliency pairs to export");
  add_override_flags(attack_cmd, ov);

  CLI::App* check_cmd = app.add_subcommand(
      "check", "run the proposition/theorem verification suites");
  (void)check_cmd;

  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep-m", "train once per m value and tabulate the metrics");
  sweep_cmd->add_option("config", config_path, "experiment config JSON")->required();
  sweep_cmd->add_option("--m", m_values, "m values for the gradient step");
  add_override_flags(sweep_cmd, ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(train_cmd)) return run_train(config_path, ov);
    if (app.got_subcommand(eval_cmd))
      return run_evaluate(config_path, checkpoint_path, ov);
    if (app.got_subcommand(attack_cmd))
      return run_attack(config_path, checkpoint_path, ov, saliency_count);
    if (app.got_subcommand(check_cmd)) return run_check();
    if (app.got_subcommand(sweep_cmd))
      return run_sweep(config_path, ov, m_values);
  } catch (const config_error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
