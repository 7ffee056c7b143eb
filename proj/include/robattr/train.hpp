#pragma once

// Experiment configuration (one JSON document) and the training loop:
// per minibatch, run the PGD attack step to get x*, freeze it, take the
// objective gradient w.r.t. theta, and apply the optimizer. The loss term
// and the (unweighted) regularizer term are logged as separate series.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "robattr/adversary.hpp"
#include "robattr/checkpoint.hpp"
#include "robattr/data.hpp"
#include "robattr/evaluate.hpp"
#include "robattr/optim.hpp"

namespace robattr {

struct DatasetSpec {
  std::string kind = "idx";  // idx | two_gaussians | xor_grid
  std::string train_images, train_labels, test_images, test_labels;
  int64_t train_count = -1;  // -1: all
  int64_t test_count = -1;
  int64_t n = 200;           // synthetic size
};

struct ModelSpec {
  std::string kind = "mlp";
  std::vector<int64_t> dims{784, 128, 64, 10};
  std::string activation = "relu";
};

struct OptimizerSpec {
  std::string kind = "adam";
  double lr = 1e-3;
  double momentum = 0.9;
};

struct TrainSpec {
  int64_t steps = 1500;
  int64_t batch = 50;
  int64_t log_every = 50;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out = "out";
  int threads = 1;
  DatasetSpec dataset;
  ModelSpec model;
  ObjectiveSpec objective;
  PgdConfig attack;
  IfiaConfig ifia;
  OptimizerSpec optimizer;
  TrainSpec train;
  ImportanceFn importance = ImportanceFn::integrated_gradients;

  static ExperimentConfig from_json_text(const std::string& text,
                                         const std::string& origin);
  static ExperimentConfig from_json_file(const std::string& path);

  Network make_network() const {
    ROBATTR_REQUIRE(model.kind == "mlp", "config: unknown model kind \"",
                    model.kind, "\"");
    const Activation act = model.activation == "softplus"
                               ? Activation::softplus
                               : Activation::relu;
    return Network::mlp(model.dims, act, seed);
  }

  Dataset load_split(bool train_split) const {
    Dataset ds;
    if (dataset.kind == "idx") {
      ds = train_split
               ? load_idx(dataset.train_images, dataset.train_labels, "train")
               : load_idx(dataset.test_images, dataset.test_labels, "test");
    } else if (dataset.kind == "two_gaussians") {
      ds = synth_two_gaussians(dataset.n, seed + (train_split ? 0 : 1));
    } else if (dataset.kind == "xor_grid") {
      ds = synth_xor_grid(dataset.n, seed + (train_split ? 0 : 1));
    } else {
      throw config_error("config: unknown dataset kind \"" + dataset.kind + "\"");
    }
    const int64_t want = train_split ? dataset.train_count : dataset.test_count;
    if (want > 0) ds = ds.head(want);
    ds.split = train_split ? "train" : "test";
    return ds;
  }

  EvalConfig eval_config() const {
    EvalConfig ec;
    ec.pgd = attack;
    ec.pgd.epsilon = objective.nbhd.epsilon;
    ec.ifia = ifia;
    ec.importance = importance;
    ec.loss = objective.loss;
    ec.seed = seed;
    ec.threads = threads;
    return ec;
  }
};

namespace detail {

inline std::pair<int, int> line_col_of(const std::string& text, size_t byte) {
  int line = 1, col = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline void require_file(const std::string& path, const char* field) {
  ROBATTR_REQUIRE(!path.empty(), "config: ", field, " is required");
  if (!std::filesystem::exists(path))
    throw config_error(msg_cat("config: ", field, ": file not found: ", path));
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json_text(
    const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = detail::line_col_of(text, e.byte > 0 ? e.byte - 1 : 0);
    throw config_error(detail::msg_cat("config: ", origin, ": parse error at line ",
                                       line, ", column ", col, ": ", e.what()));
  }
  try {
    ExperimentConfig cfg;
    ROBATTR_REQUIRE(j.contains("seed"), "config: \"seed\" is mandatory");
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.out = j.value("out", cfg.out);
    cfg.threads = j.value("threads", cfg.threads);

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
      cfg.dataset.train_images = d.value("train_images", std::string());
      cfg.dataset.train_labels = d.value("train_labels", std::string());
      cfg.dataset.test_images = d.value("test_images", std::string());
      cfg.dataset.test_labels = d.value("test_labels", std::string());
      cfg.dataset.train_count = d.value("train_count", cfg.dataset.train_count);
      cfg.dataset.test_count = d.value("test_count", cfg.dataset.test_count);
      cfg.dataset.n = d.value("n", cfg.dataset.n);
      if (cfg.dataset.kind == "idx") {
        detail::require_file(cfg.dataset.train_images, "dataset.train_images");
        detail::require_file(cfg.dataset.train_labels, "dataset.train_labels");
        detail::require_file(cfg.dataset.test_images, "dataset.test_images");
        detail::require_file(cfg.dataset.test_labels, "dataset.test_labels");
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.model.kind = m.value("kind", cfg.model.kind);
      if (m.contains("dims"))
        cfg.model.dims = m.at("dims").get<std::vector<int64_t>>();
      cfg.model.activation = m.value("activation", cfg.model.activation);
    }
    if (j.contains("objective")) {
      const auto& o = j.at("objective");
      const std::string variant = o.value("variant", std::string("ig_norm"));
      if (variant == "ig_norm") {
        cfg.objective.variant = ObjectiveVariant::ig_norm;
      } else if (variant == "natural") {
        cfg.objective.variant = ObjectiveVariant::ig_norm;
        cfg.objective.lambda = 0.0;
      } else if (variant == "ig_sum_norm") {
        cfg.objective.variant = ObjectiveVariant::ig_sum_norm;
      } else if (variant == "madry") {
        cfg.objective.variant = ObjectiveVariant::madry;
        cfg.objective.size = SizeFunction::sum();
        cfg.objective.lambda = 1.0;
      } else if (variant == "input_grad_reg") {
        cfg.objective.variant = ObjectiveVariant::input_grad_reg;
        cfg.objective.path.m = 1;
      } else if (variant == "loss_output") {
        cfg.objective.variant = ObjectiveVariant::loss_output;
      } else {
        throw config_error("config: unknown objective variant \"" + variant + "\"");
      }
      if (variant != "natural" && variant != "madry")
        cfg.objective.lambda = o.value("lambda", cfg.objective.lambda);
      cfg.objective.beta = o.value("beta", cfg.objective.beta);
      cfg.objective.q = o.value("q", cfg.objective.q);
      cfg.objective.lambda_prime = o.value("lambda_prime", cfg.objective.lambda_prime);
      if (o.contains("size") && variant != "madry") {
        const std::string s = o.at("size").get<std::string>();
        if (s == "sum") cfg.objective.size = SizeFunction::sum();
        else if (s == "one_norm") cfg.objective.size = SizeFunction::one_norm();
        else if (s == "one_norm_pow")
          cfg.objective.size = SizeFunction::one_norm_pow(cfg.objective.q);
        else throw config_error("config: unknown size function \"" + s + "\"");
      }
      cfg.objective.layer = o.value("layer", cfg.objective.layer);
      cfg.objective.path.m = o.value("m_gradient", cfg.objective.path.m);
      cfg.objective.nbhd.epsilon = o.value("epsilon", cfg.objective.nbhd.epsilon);
      const std::string loss = o.value("loss", std::string("cross_entropy_nll"));
      if (loss == "cross_entropy_nll")
        cfg.objective.loss = LossKind::cross_entropy_nll;
      else if (loss == "softplus_hinge")
        cfg.objective.loss = LossKind::softplus_hinge;
      else throw config_error("config: unknown loss \"" + loss + "\"");
    }
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      cfg.attack.steps = a.value("steps", cfg.attack.steps);
      cfg.attack.step_size = a.value("step_size", cfg.attack.step_size);
      cfg.attack.random_start = a.value("random_start", cfg.attack.random_start);
      cfg.attack.m_attack = a.value("m_attack", cfg.attack.m_attack);
    }
    cfg.attack.epsilon = cfg.objective.nbhd.epsilon;
    if (j.contains("ifia")) {
      const auto& f = j.at("ifia");
      cfg.ifia.k = f.value("k", cfg.ifia.k);
      cfg.ifia.epsilon = f.value("epsilon", cfg.objective.nbhd.epsilon);
      cfg.ifia.alpha = f.value("alpha", cfg.ifia.alpha);
      cfg.ifia.iters = f.value("iters", cfg.ifia.iters);
      cfg.ifia.restarts = f.value("restarts", cfg.ifia.restarts);
      cfg.ifia.m_attack = f.value("m_attack", cfg.ifia.m_attack);
      cfg.ifia.m_metrics = f.value("m_metrics", cfg.ifia.m_metrics);
      cfg.ifia.metrics_k = f.value("metrics_k", cfg.ifia.metrics_k);
    } else {
      cfg.ifia.epsilon = cfg.objective.nbhd.epsilon;
    }
    if (j.contains("importance")) {
      const std::string fn = j.at("importance").get<std::string>();
      if (fn == "integrated_gradients")
        cfg.importance = ImportanceFn::integrated_gradients;
      else if (fn == "simple_gradient")
        cfg.importance = ImportanceFn::simple_gradient;
      else throw config_error("config: unknown importance function \"" + fn + "\"");
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      cfg.optimizer.kind = o.value("kind", cfg.optimizer.kind);
      cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
      cfg.optimizer.momentum = o.value("momentum", cfg.optimizer.momentum);
      ROBATTR_REQUIRE(cfg.optimizer.kind == "adam" || cfg.optimizer.kind == "sgd",
                      "config: unknown optimizer \"", cfg.optimizer.kind, "\"");
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.steps = t.value("steps", cfg.train.steps);
      cfg.train.batch = t.value("batch", cfg.train.batch);
      cfg.train.log_every = t.value("log_every", cfg.train.log_every);
      ROBATTR_REQUIRE(cfg.train.steps >= 1 && cfg.train.batch >= 1,
                      "config: train.steps and train.batch must be >= 1");
    }
    cfg.objective.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(detail::msg_cat("config: ", origin, ": ", e.what()));
  }
}

inline ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw config_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json_text(buf.str(), path);
}

// ---- training ----

struct TrainLogRow {
  int64_t step = 0;
  double loss_term = 0.0;
  double reg_term = 0.0;
  double total = 0.0;
  double completeness = 0.0;  // mean residual of the training-time IG
};

struct TrainResult {
  Network net;
  std::vector<TrainLogRow> log;
};

inline std::vector<int64_t> epoch_order(uint64_t seed, int64_t n, int64_t epoch) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng = Rng(seed).fork(0xE90C4ull + static_cast<uint64_t>(epoch));
  rng.shuffle(idx);
  return idx;
}

inline bool objective_needs_attack(const ObjectiveSpec& spec) {
  if (spec.nbhd.epsilon == 0.0) return false;
  if (spec.variant == ObjectiveVariant::ig_norm && spec.lambda == 0.0)
    return false;
  return true;
}

inline TrainResult train_model(const ExperimentConfig& cfg,
                               const Dataset& trainset,
                               const std::string& snapshot_path = "",
                               std::ostream* progress = nullptr) {
  trainset.validate();
  const int64_t n = trainset.size();
  ROBATTR_REQUIRE(cfg.train.batch <= n, "train: batch ", cfg.train.batch,
                  " larger than dataset ", n);
  TrainResult result;
  result.net = cfg.make_network();
  AdamState adam;
  SgdState sgd;
  const AdamConfig adam_cfg{cfg.optimizer.lr, 0.9, 0.999, 1e-8};
  const SgdConfig sgd_cfg{cfg.optimizer.lr, cfg.optimizer.momentum};

  PgdConfig attack = cfg.attack;
  attack.epsilon = cfg.objective.nbhd.epsilon;
  const bool attacking = objective_needs_attack(cfg.objective);

  std::vector<int64_t> order = epoch_order(cfg.seed, n, 0);
  int64_t pos = 0, epoch = 0;
  for (int64_t step = 1; step <= cfg.train.steps; ++step) {
    if (pos + cfg.train.batch > n) {
      ++epoch;
      order = epoch_order(cfg.seed, n, epoch);
      pos = 0;
    }
    std::vector<int64_t> idx(order.begin() + pos,
                             order.begin() + pos + cfg.train.batch);
    pos += cfg.train.batch;
    Batch batch = trainset.batch(idx);

    Tensor x_star = batch.x;
    if (attacking) {
      Rng attack_rng = Rng(cfg.seed).fork(0xA77ACull * 1000003ull +
                                          static_cast<uint64_t>(step));
      x_star = pgd_inner_max(cfg.objective, result.net, batch, attack, attack_rng)
                   .x_star;
    }

    ObjectiveGrads og = objective_grad(cfg.objective, result.net, batch, x_star);
    if (!std::isfinite(og.total)) {
      if (!snapshot_path.empty()) save_checkpoint(result.net, snapshot_path);
      throw error(detail::msg_cat(
          "train: non-finite loss at step ", step,
          snapshot_path.empty() ? "" : ("; snapshot written to " + snapshot_path)));
    }
    if (cfg.optimizer.kind == "adam")
      adam_step(result.net.mutable_params(), og.grads, adam, adam_cfg);
    else
      sgd_step(result.net.mutable_params(), og.grads, sgd, sgd_cfg);

    if (step % cfg.train.log_every == 0 || step == cfg.train.steps) {
      result.log.push_back(TrainLogRow{step, og.loss_term, og.reg_term,
                                       og.total, og.completeness});
      if (progress)
        (*progress) << "step " << step << " loss " << og.loss_term << " reg "
                    << og.reg_term << " resid " << og.completeness << "\n";
    }
  }
  return result;
}

inline std::string train_log_to_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "step,loss_term,reg_term,total,completeness\n";
  for (const TrainLogRow& r : log)
    os << r.step << "," << detail::fmt_double(r.loss_term) << ","
       << detail::fmt_double(r.reg_term) << "," << detail::fmt_double(r.total)
       << "," << detail::fmt_double(r.completeness) << "\n";
  return os.str();
}

// ---- m sweep ----

struct MSweepRow {
  int m = 0;
  double nat_acc = 0.0, adv_acc = 0.0, topk_inter = 0.0, kendall = 0.0;
  double final_residual = 0.0;
};

inline std::vector<MSweepRow> run_m_sweep(const ExperimentConfig& cfg,
                                          const std::vector<int>& m_values,
                                          const Dataset& trainset,
                                          const Dataset& testset,
                                          std::ostream* progress = nullptr) {
  std::vector<MSweepRow> rows;
  for (int m : m_values) {
    ExperimentConfig c = cfg;
    c.objective.path.m = m;
    if (progress) (*progress) << "m=" << m << " training...\n";
    TrainResult tr = train_model(c, trainset, "", nullptr);
    EvalReport rep = evaluate(tr.net, testset, cfg.eval_config());
    MSweepRow row;
    row.m = m;
    row.nat_acc = rep.nat_acc;
    row.adv_acc = rep.adv_acc;
    row.topk_inter = rep.topk_inter;
    row.kendall = rep.kendall;
    row.final_residual = tr.log.empty() ? 0.0 : tr.log.back().completeness;
    rows.push_back(row);
    if (progress)
      (*progress) << "m=" << m << " nat " << row.nat_acc << " adv "
                  << row.adv_acc << " topk " << row.topk_inter << " kendall "
                  << row.kendall << "\n";
  }
  return rows;
}

inline std::string msweep_to_csv(const std::vector<MSweepRow>& rows) {
  std::ostringstream os;
  os << "m,nat_acc,adv_acc,topk_inter,kendall,final_residual\n";
  for (const MSweepRow& r : rows)
    os << r.m << "," << detail::fmt_double(r.nat_acc) << ","
       << detail::fmt_double(r.adv_acc) << "," << detail::fmt_double(r.topk_inter)
       << "," << detail::fmt_double(r.kendall) << ","
       << detail::fmt_double(r.final_residual) << "\n";
  return os.str();
}

inline std::vector<MSweepRow> parse_msweep_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);  // header
  std::vector<MSweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MSweepRow r;
    std::istringstream ls(line);
    std::string tok;
    std::getline(ls, tok, ','); r.m = std::stoi(tok);
    std::getline(ls, tok, ','); r.nat_acc = std::stod(tok);
    std::getline(ls, tok, ','); r.adv_acc = std::stod(tok);
    std::getline(ls, tok, ','); r.topk_inter = std::stod(tok);
    std::getline(ls, tok, ','); r.kendall = std::stod(tok);
    std::getline(ls, tok, ','); r.final_residual = std::stod(tok);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace robattr
