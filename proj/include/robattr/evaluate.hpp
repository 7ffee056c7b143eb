#pragma once

// Evaluation protocol: natural accuracy over all test samples, adversarial
// accuracy under the PGD prediction attack, and attribution robustness
// (Kendall tau + top-k intersection under IFIA) over the correctly
// classified samples only. Chunks of samples run independently, optionally
// across threads; aggregation order is fixed by sample index.

#include <atomic>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "robattr/adversary.hpp"
#include "robattr/data.hpp"
#include "robattr/metrics.hpp"

namespace robattr {

struct PerSampleEval {
  int index = 0;
  int label = 0;
  int pred = 0;
  bool correct = false;
  bool adv_correct = false;
  bool attacked = false;  // in the IFIA population (correctly classified)
  double kendall = 0.0;
  double topk_inter = 0.0;
};

struct EvalReport {
  double nat_acc = 0.0;
  double adv_acc = 0.0;
  double topk_inter = 0.0;
  double kendall = 0.0;
  std::vector<PerSampleEval> per_sample;
};

struct EvalConfig {
  PgdConfig pgd;
  IfiaConfig ifia;
  ImportanceFn importance = ImportanceFn::integrated_gradients;
  LossKind loss = LossKind::cross_entropy_nll;
  uint64_t seed = 1;
  int threads = 1;
  int chunk = 50;
};

inline EvalReport evaluate(const Network& net, const Dataset& test,
                           const EvalConfig& cfg) {
  ROBATTR_REQUIRE(!test.samples.empty(), "evaluate: empty dataset");
  const int64_t n = test.size();
  const int64_t chunk = std::max<int64_t>(1, cfg.chunk);
  const int64_t nchunks = (n + chunk - 1) / chunk;

  EvalReport report;
  report.per_sample.resize(static_cast<size_t>(n));

  std::atomic<int64_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const int64_t ci = next.fetch_add(1);
      if (ci >= nchunks) return;
      const int64_t lo = ci * chunk;
      const int64_t hi = std::min(n, lo + chunk);
      std::vector<int64_t> idx;
      for (int64_t i = lo; i < hi; ++i) idx.push_back(i);
      Batch batch = test.batch(idx);
      const int64_t bsz = hi - lo;

      // clean predictions
      std::vector<int> pred;
      {
        Tape tape;
        Network::Bound bound = net.bind(tape, false);
        Node logits = net.forward(tape, tape.constant(batch.x), bound);
        pred = predict_classes(logits.value());
      }
      // prediction attack on the whole chunk
      Rng chunk_rng = Rng(cfg.seed).fork(0xADu * 1000003ull +
                                         static_cast<uint64_t>(ci));
      PredictionAttackResult adv =
          pgd_prediction_attack(net, batch, cfg.pgd, chunk_rng, cfg.loss);

      // IFIA on the correctly classified subset of the chunk
      std::vector<int64_t> atk_local;
      for (int64_t i = 0; i < bsz; ++i)
        if (pred[static_cast<size_t>(i)] == batch.y[static_cast<size_t>(i)])
          atk_local.push_back(i);
      std::vector<IfiaResult> ifia;
      if (!atk_local.empty()) {
        std::vector<int64_t> global;
        for (int64_t i : atk_local) global.push_back(lo + i);
        Batch sub = test.batch(global);
        std::vector<uint64_t> streams;
        for (int64_t g : global) streams.push_back(static_cast<uint64_t>(g));
        ifia = ifia_topk_batch(net, sub, cfg.ifia, cfg.importance, cfg.loss,
                               cfg.seed, streams);
      }

      for (int64_t i = 0; i < bsz; ++i) {
        PerSampleEval& row = report.per_sample[static_cast<size_t>(lo + i)];
        row.index = static_cast<int>(lo + i);
        row.label = batch.y[static_cast<size_t>(i)];
        row.pred = pred[static_cast<size_t>(i)];
        row.correct = row.pred == row.label;
        row.adv_correct = adv.pred[static_cast<size_t>(i)] == row.label;
      }
      for (size_t a = 0; a < atk_local.size(); ++a) {
        PerSampleEval& row =
            report.per_sample[static_cast<size_t>(lo + atk_local[a])];
        row.attacked = true;
        row.kendall = ifia[a].kendall;
        row.topk_inter = ifia[a].topk_inter;
      }
    }
  };

  const int nthreads = std::max(1, cfg.threads);
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  int64_t ncorrect = 0, nadv = 0, nattacked = 0;
  double ksum = 0.0, tsum = 0.0;
  for (const PerSampleEval& row : report.per_sample) {
    ncorrect += row.correct ? 1 : 0;
    nadv += row.adv_correct ? 1 : 0;
    if (row.attacked) {
      ++nattacked;
      ksum += row.kendall;
      tsum += row.topk_inter;
    }
  }
  report.nat_acc = static_cast<double>(ncorrect) / static_cast<double>(n);
  report.adv_acc = static_cast<double>(nadv) / static_cast<double>(n);
  report.kendall = nattacked ? ksum / static_cast<double>(nattacked) : 0.0;
  report.topk_inter = nattacked ? tsum / static_cast<double>(nattacked) : 0.0;
  return report;
}

// ---- serialization ----

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string report_to_json(const EvalReport& r) {
  std::ostringstream os;
  os << "{\n"
     << "  \"nat_acc\": " << detail::fmt_double(r.nat_acc) << ",\n"
     << "  \"adv_acc\": " << detail::fmt_double(r.adv_acc) << ",\n"
     << "  \"topk_inter\": " << detail::fmt_double(r.topk_inter) << ",\n"
     << "  \"kendall\": " << detail::fmt_double(r.kendall) << ",\n"
     << "  \"per_sample\": [\n";
  for (size_t i = 0; i < r.per_sample.size(); ++i) {
    const PerSampleEval& s = r.per_sample[i];
    os << "    {\"index\": " << s.index << ", \"label\": " << s.label
       << ", \"pred\": " << s.pred << ", \"correct\": " << (s.correct ? 1 : 0)
       << ", \"adv_correct\": " << (s.adv_correct ? 1 : 0)
       << ", \"attacked\": " << (s.attacked ? 1 : 0)
       << ", \"kendall\": " << detail::fmt_double(s.kendall)
       << ", \"topk_inter\": " << detail::fmt_double(s.topk_inter) << "}"
       << (i + 1 < r.per_sample.size() ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

inline std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "index,label,pred,correct,adv_correct,attacked,kendall,topk_inter\n";
  for (const PerSampleEval& s : r.per_sample) {
    os << s.index << "," << s.label << "," << s.pred << "," << (s.correct ? 1 : 0)
       << "," << (s.adv_correct ? 1 : 0) << "," << (s.attacked ? 1 : 0) << ","
       << detail::fmt_double(s.kendall) << ","
       << detail::fmt_double(s.topk_inter) << "\n";
  }
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  ROBATTR_REQUIRE(os.good(), "cannot open ", path, " for writing");
  os << body;
}

}  // namespace robattr
