// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. `--only N[,M...]` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli.hpp"
#include "oracles.hpp"
#include "sgdet/gcnext.hpp"
#include "sgdet/head.hpp"
#include "sgdet/model.hpp"
#include "sgdet/postprocess.hpp"
#include "sgdet/segment.hpp"
#include "sgdet/sgalign.hpp"
#include "sgdet/synth.hpp"
#include "sgdet/trainer.hpp"
#include "test_util.hpp"

using namespace sgdet;
using namespace sgdet::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

// ---- 1 ----------------------------------------------------------------------

Verdict equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t c = 1 + rng() % 16, l = 1 + rng() % 32;
    const Tensor x = random_tensor({c, l}, rng);
    worst = std::max(worst, temporal_stream_equivalence(x, random_tensor({c, c}, rng),
                                                        random_tensor({c, c}, rng),
                                                        random_tensor({c, c}, rng)));
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "100 instances, max deviation " << worst << ", " << t << " s";
  return {worst < 1e-10 && t < 5.0, d.str()};
}

// ---- 2 ----------------------------------------------------------------------

ModelConfig tiny_model() {
  ModelConfig m;
  m.input_dim = 4;
  m.width = 4;
  m.cardinality = 2;
  m.k_neighbors = 2;
  m.tau1 = 4;
  m.tau2 = 2;
  m.max_duration = 6;
  m.hidden = {6, 4};
  return m;
}

// Weighted sum so every output element gets its own cotangent.
Tensor probe_sum(const Tensor& y, const Tensor& probe) { return sum(mul(y, probe)); }

constexpr double kStep = 1e-4;
// A stencil of half-width kStep stays inside one linear piece of every relu
// when no pre-activation is closer than this to zero.
constexpr double kKinkMargin = 10 * kStep;

struct AuditErrors {
  double block = 0, align = 0, head = 0, node = 0, full = 0;
};

// The k-NN graph is piecewise constant in the parameters. True when no single
// +-kStep perturbation changes any block's edge set.
bool knn_stable(Model& model, const Tensor& raw, const AnchorContext& ctx) {
  NoGradGuard ng;
  auto edges = [&] { return model.forward(raw, ctx, false).backbone.semantic_edges; };
  const auto base = edges();
  for (auto& [name, t] : model.parameters()) {
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double o = v[i];
      bool same = true;
      for (double d : {kStep, -kStep}) {
        v[i] = o + d;
        same = same && edges() == base;
      }
      v[i] = o;
      if (!same) return false;
    }
  }
  return true;
}

// One random instance. Returns false without checking anything when a relu
// pre-activation of any audited function lies within kKinkMargin of its kink,
// or when the stencil would switch the semantic graph.
bool audit_instance(std::uint64_t seed, std::mt19937_64& rng, AuditErrors& worst) {
  const std::size_t length = 8;
  Model model(tiny_model());
  model.initialize(seed);
  // move weights off the small uniform init so every unit is exercised
  for (auto& [name, t] : model.parameters()) fill_random(t, rng, 0.6);
  auto& params = model.parameters();
  const auto ctx = make_anchor_context(model.config(), length, length);
  const std::size_t j = ctx->anchors.size();

  const Tensor raw = random_tensor({4, length}, rng);
  const Tensor x0 = model.project_input(raw).detach();
  const EdgeList e0 = knn_semantic_edges(x0, 2);
  const Tensor probe0 = random_tensor({4, length}, rng);
  auto block_fn = [&] { return probe_sum(gcnext_forward(x0, e0, model.blocks()[0]), probe0); };

  Tensor xa = random_param({4, length}, rng);
  const EdgeList ea = knn_semantic_edges(xa, 2);
  const Tensor probe_a = random_tensor({j, 6}, rng);
  Tensor& w1 = params.get("head/fc0_w");
  auto align_fn = [&] {
    return probe_sum(matmul(sgalign_forward(xa, ea, ctx->anchors, 4, 2), w1), probe_a);
  };
  auto fused_fn = [&] {
    return probe_sum(aligned_projection({{xa, ctx->temporal, 0},
                                         {semantic_smooth(xa, ea), ctx->semantic, 16}},
                                        w1),
                     probe_a);
  };

  const Tensor head_in = random_tensor({j, 24}, rng);
  const Tensor probe_h = random_tensor({j, 2}, rng);
  auto head_fn = [&] { return probe_sum(localization_forward(head_in, model.head()), probe_h); };

  const Tensor node_in = random_tensor({4, length}, rng);
  const Tensor probe_n = random_tensor({length, 2}, rng);
  auto node_fn = [&] { return probe_sum(node_branch_forward(node_in, model.head()), probe_n); };

  TrainingSample sample;
  sample.features = raw;
  sample.anchors = ctx;
  const std::vector<Segment> gt{{2.0, 5.0}};
  sample.anchor_labels = assign_anchor_labels(ctx->anchors, gt);
  sample.node_labels = assign_node_labels(length, gt);
  const auto thetas = params.tensors();
  auto full_fn = [&] {
    const SampleLoss l = sample_loss(model, sample);
    return total_loss(l.subgraph, l.node, thetas, model.config().lambda2);
  };

  {
    NoGradGuard ng;
    ReluMarginProbe margin;
    block_fn();
    align_fn();
    head_fn();
    node_fn();
    full_fn();
    if (margin.margin() < kKinkMargin) return false;
  }
  if (!knn_stable(model, raw, *ctx)) return false;

  auto has_prefix = [](const std::string& name, const char* p) { return name.rfind(p, 0) == 0; };
  for (auto& [name, t] : params) {
    if (has_prefix(name, "block0/")) worst.block = std::max(worst.block, grad_check(block_fn, t, kStep));
    if (has_prefix(name, "head/fc")) worst.head = std::max(worst.head, grad_check(head_fn, t, kStep));
    if (has_prefix(name, "node/")) worst.node = std::max(worst.node, grad_check(node_fn, t, kStep));
    worst.full = std::max(worst.full, grad_check(full_fn, t, kStep));
  }
  worst.align = std::max({worst.align, grad_check(align_fn, xa, kStep), grad_check(align_fn, w1, kStep),
                          grad_check(fused_fn, xa, kStep), grad_check(fused_fn, w1, kStep)});
  return true;
}

Verdict gradient_audit() {
  const auto t0 = Clock::now();
  AuditErrors worst;
  std::size_t redraws = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    while (!audit_instance(seed, rng, worst)) ++redraws;
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "20 seeds (" << redraws << " redraws near a relu kink or k-NN tie), max rel. err block " << worst.block << ", sgalign " << worst.align
    << ", head " << worst.head << ", node " << worst.node << ", full loss " << worst.full << "; "
    << t << " s";
  const double w = std::max({worst.block, worst.align, worst.head, worst.node, worst.full});
  return {w < 1e-3 && t < 60.0, d.str()};
}

// ---- 3 ----------------------------------------------------------------------

Verdict anchors() {
  const std::size_t n = enumerate_anchors(100, 64).size();
  std::size_t oracle = 0;
  for (std::size_t d = 1; d <= 63; ++d) oracle += 99 - d;
  bool ok = n == 4221 && oracle == 4221;
  std::size_t cases = 0;
  for (std::size_t l = 0; l <= 20; ++l)
    for (std::size_t dmax = 2; dmax <= 10; ++dmax) {
      std::vector<Anchor> brute;
      for (std::size_t s = 0; s < l; ++s)
        for (std::size_t e = 0; e < l; ++e)
          if (s > 0 && s < e && e - s < dmax) brute.push_back({s, e});
      ok = ok && enumerate_anchors(l, dmax) == brute;
      ++cases;
    }
  std::ostringstream d;
  d << "L=100 D=64 gives " << n << " (oracle " << oracle << "); " << cases
    << " exhaustive (L, D) cases";
  return {ok, d.str()};
}

// ---- 4 ----------------------------------------------------------------------

Verdict alignment_oracle() {
  std::mt19937_64 rng(44);
  double worst_ramp = 0.0, worst_const = 0.0, worst_generic = 0.0;
  std::size_t ramps = 0;
  // every anchor and resolution on a few ramps
  for (const std::size_t l : {8u, 20u, 100u}) {
    const double a = 0.75, b = -3.0;
    std::vector<double> v(2 * l);
    for (std::size_t i = 0; i < l; ++i) {
      v[i] = a * i + b;
      v[l + i] = -2.0 * i + 1.0;
    }
    const Tensor x = Tensor::from_vector({2, l}, v);
    for (const Anchor& an : enumerate_anchors(l, 64))
      for (std::size_t tau : {1u, 2u, 4u, 32u}) {
        const Tensor y = interp_rescale(x, an, tau);
        for (std::size_t k = 0; k < tau; ++k) {
          worst_ramp = std::max(worst_ramp, std::abs(y.at(2 * k) - ramp_bin_mean(an.start, an.end, tau, k, a, b)));
          worst_ramp = std::max(worst_ramp, std::abs(y.at(2 * k + 1) - ramp_bin_mean(an.start, an.end, tau, k, -2.0, 1.0)));
        }
        ++ramps;
      }
  }
  // 50 random anchors and resolutions: constants, plus the sample-by-sample oracle
  for (int i = 0; i < 50; ++i) {
    const std::size_t l = 4 + rng() % 120;
    const std::size_t s = 1 + rng() % (l - 3);
    const std::size_t e = s + 1 + rng() % (l - 1 - s);
    const std::size_t tau = 1 + rng() % 40;
    const double c = std::uniform_real_distribution<double>(-5, 5)(rng);
    const Tensor flat = interp_rescale(Tensor::full({3, l}, c), {s, e}, tau);
    for (double v : flat.data())
      worst_const = std::max(worst_const, std::abs(v - c));
    const Tensor x = random_tensor({3, l}, rng);
    const auto o = oracle_rescale(x, s, e, tau);
    const Tensor y = interp_rescale(x, {s, e}, tau);
    for (std::size_t k = 0; k < o.size(); ++k) worst_generic = std::max(worst_generic, std::abs(y.at(k) - o[k]));
  }
  std::ostringstream d;
  d << ramps << " ramp cases max err " << worst_ramp << "; 50 constant cases max err "
    << worst_const << "; random-feature oracle max err " << worst_generic;
  return {worst_ramp < 1e-12 && worst_const < 1e-12 && worst_generic < 1e-12, d.str()};
}

// ---- 5 ----------------------------------------------------------------------

Verdict iou_ap_oracles() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_iou = 0.0;
  int pairs = 0;
  while (pairs < 1000) {
    double a0 = 100 * u(rng), a1 = 100 * u(rng), b0 = 100 * u(rng), b1 = 100 * u(rng);
    if (a0 > a1) std::swap(a0, a1);
    if (b0 > b1) std::swap(b0, b1);
    if (a1 - a0 < 1e-9 || b1 - b0 < 1e-9) continue;
    // bias half of the pairs towards overlap
    if (pairs % 2 == 0) {
      b0 = a0 + (a1 - a0) * (u(rng) - 0.3);
      b1 = b0 + (a1 - a0) * (0.2 + u(rng));
    }
    worst_iou = std::max(worst_iou, std::abs(segment_iou({a0, a1}, {b0, b1}) - interval_iou(a0, a1, b0, b1)));
    ++pairs;
  }
  double worst_ap = 0.0;
  int fixtures = 0;
  const std::vector<std::string> vids{"a", "b"};
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t np = rng() % 6, ng = 1 + rng() % 3;
    std::vector<GroundTruth> gts;
    for (std::size_t g = 0; g < ng; ++g) {
      const double s = 10 * u(rng);
      gts.push_back({vids[rng() % 2], {s, s + 1 + 4 * u(rng)}});
    }
    std::vector<Prediction> preds;
    for (std::size_t p = 0; p < np; ++p) {
      const auto& near = gts[rng() % ng];
      const double s = near.segment.start + 1.5 * (u(rng) - 0.5);
      const double e = std::max(s + 0.2, near.segment.end + 1.5 * (u(rng) - 0.5));
      preds.push_back({rng() % 4 ? near.video_id : vids[rng() % 2], {s, e}, u(rng)});
    }
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      worst_ap = std::max(worst_ap, std::abs(average_precision(preds, gts, t) - brute_force_ap(preds, gts, t)));
      ++fixtures;
    }
  }
  std::ostringstream d;
  d << pairs << " IoU pairs max err " << worst_iou << "; " << fixtures
    << " AP fixtures (<=5 predictions, <=3 ground truths) max err " << worst_ap;
  return {worst_iou < 1e-12 && worst_ap < 1e-12, d.str()};
}

// ---- 6 ----------------------------------------------------------------------

Verdict soft_nms_properties() {
  bool ok = true;
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int runs = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> in;
    const std::size_t n = 1 + rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = 30 * u(rng);
      in.push_back({s, s + 0.5 + 10 * u(rng), "a", u(rng)});
    }
    // plant exact and near duplicates
    for (std::size_t i = 0; i < n / 4; ++i) {
      Detection d = in[rng() % in.size()];
      d.end += (rng() % 2) * 0.05;
      d.score = u(rng);
      in.push_back(d);
    }
    double top = 0.0;
    for (const auto& d : in) top = std::max(top, d.score);
    for (NmsMethod m : {NmsMethod::linear, NmsMethod::gaussian}) {
      const auto out = soft_nms(in, {m, 0.84, 0.4, 0});
      ok = ok && out.size() == in.size() && out[0].score == top;
      // match outputs back to inputs as a multiset and compare scores
      std::vector<bool> used(in.size(), false);
      for (const auto& o : out) {
        bool matched = false;
        for (std::size_t i = 0; i < in.size() && !matched; ++i) {
          if (used[i] || in[i].start != o.start || in[i].end != o.end || o.score > in[i].score) continue;
          used[i] = matched = true;
        }
        ok = ok && matched;
      }
      ++runs;
    }
  }
  // duplicate interval, linear rule with theta = 0.84
  const SoftNmsConfig defaults;
  const auto dup = soft_nms({{1, 5, "a", 0.9}, {1, 5, "a", 0.8}}, defaults);
  const bool dup_ok = defaults.method == NmsMethod::linear && defaults.threshold == 0.84 &&
                      dup.size() == 2 && dup[0].score == 0.9 && dup[1].score == 0.0;
  // IoU 0.9 above theta decays by (1 - 0.9); IoU 0.8 below theta is untouched
  const auto step = soft_nms({{0, 10, "a", 0.9}, {0, 9, "a", 0.5}, {0, 8, "a", 0.4}}, defaults);
  // survivors come out in selection order: 0.9, then the untouched 0.4, then 0.05 * (1 - 8/9)
  const bool step_ok = step[1].score == 0.4 && std::abs(step[2].score - 0.05 / 9.0) < 1e-15;
  std::ostringstream d;
  d << runs << " random runs monotone with top-1 kept; duplicate (0.9, 0.8) -> (" << dup[0].score
    << ", " << dup[1].score << "); threshold step " << (step_ok ? "exact" : "wrong");
  return {ok && dup_ok && step_ok, d.str()};
}

// ---- 7 ----------------------------------------------------------------------

struct PipelineResult {
  int code = 0;
  std::string failure;
  double map50 = 0.0;
  double seconds = 0.0;
};

PipelineResult pipeline(const fs::path& root, std::uint64_t seed, bool semantic) {
  const auto t0 = Clock::now();
  PipelineResult r;
  const std::string s = std::to_string(seed);
  const std::string data = (root / ("data" + s)).string();
  const std::string run = (root / ((semantic ? "full" : "nosem") + s)).string();
  fs::create_directories(run);
  auto call = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "sgdet");
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    if (code != 0 && r.code == 0) {
      r.code = code;
      r.failure = args[1] + ": " + err.str();
    }
    return code == 0;
  };
  if (!fs::exists(data + "/manifest.json") &&
      !call({"synth", "--out", data, "--videos", "200", "--length", "100", "--dim", "32",
             "--min-actions", "1", "--max-actions", "3", "--noise", "0.5", "--seed", s})) {
    return r;
  }
  std::vector<std::string> train{"train", "--manifest", data + "/manifest.json", "--out",
                                 run + "/model.ckpt", "--epochs", "10", "--seed", s};
  if (!semantic) train.push_back("--no-semantic");
  if (!call(train)) return r;
  if (!call({"infer", "--manifest", data + "/manifest.json", "--annotations",
             data + "/annotations.json", "--subset", "validation", "--checkpoint",
             run + "/model.ckpt", "--out", run + "/detections.json"})) {
    return r;
  }
  if (!call({"eval", "--detections", run + "/detections.json", "--annotations",
             data + "/annotations.json", "--subset", "validation", "--class-agnostic",
             "--thresholds", "0.5", "--out", run + "/report.json"})) {
    return r;
  }
  std::ifstream is(run + "/report.json");
  const auto report = nlohmann::json::parse(is);
  r.map50 = report.at("mAP").at("0.50").get<double>();
  r.seconds = seconds_since(t0);
  return r;
}

Verdict end_to_end(const fs::path& root) {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());

  // Runs the jobs with at most `workers` in flight; returns wall time.
  auto run_all = [&](bool semantic, std::vector<PipelineResult>& results) {
    const auto t0 = Clock::now();
    results.assign(seeds.size(), {});
    for (std::size_t begin = 0; begin < seeds.size(); begin += workers) {
      std::vector<std::future<PipelineResult>> jobs;
      for (std::size_t i = begin; i < std::min(seeds.size(), begin + workers); ++i)
        jobs.push_back(std::async(std::launch::async, pipeline, root, seeds[i], semantic));
      for (std::size_t i = 0; i < jobs.size(); ++i) results[begin + i] = jobs[i].get();
    }
    return seconds_since(t0);
  };

  std::vector<PipelineResult> full, ablation;
  const double full_wall = run_all(true, full);
  const double ablation_wall = run_all(false, ablation);

  std::ostringstream d;
  bool ok = true;
  double full_mean = 0.0, ablation_mean = 0.0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (const auto* r : {&full[i], &ablation[i]}) {
      if (r->code != 0) {
        ok = false;
        d << "seed " << seeds[i] << " failed (exit " << r->code << ") " << r->failure << "; ";
      }
    }
    full_mean += full[i].map50 / static_cast<double>(seeds.size());
    ablation_mean += ablation[i].map50 / static_cast<double>(seeds.size());
  }
  d.setf(std::ios::fixed);
  d.precision(4);
  d << "mAP@0.5 per seed";
  for (const auto& r : full) d << ' ' << r.map50;
  d << ", mean " << full_mean << " (need >= 0.85); no-semantic mean " << ablation_mean
    << " (need <= " << full_mean + 0.02 << ")";
  d.precision(0);
  d << "; full pipelines " << full_wall << " s wall (need < 900), ablation " << ablation_wall
    << " s, " << workers << " worker(s)";
  ok = ok && full_mean >= 0.85 && ablation_mean <= full_mean + 0.02 && full_wall < 900.0;
  return {ok, d.str()};
}

// ---- 8 ----------------------------------------------------------------------

Verdict loss_composition() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(800 + seed);
    Model model(tiny_model());
    model.initialize(seed);
    for (auto& [name, t] : model.parameters()) fill_random(t, rng, 0.6);
    const auto ctx = make_anchor_context(model.config(), 8, 8);
    TrainingSample sample;
    sample.features = random_tensor({4, 8}, rng);
    sample.anchors = ctx;
    const std::vector<Segment> gt{{1.0, 4.0}, {5.0, 7.0}};
    sample.anchor_labels = assign_anchor_labels(ctx->anchors, gt);
    sample.node_labels = assign_node_labels(8, gt);
    const SampleLoss l = sample_loss(model, sample);
    const auto thetas = model.parameters().tensors();
    const double total = total_loss(l.subgraph, l.node, thetas, model.config().lambda2).item();
    double sq = 0.0;
    for (const auto& t : thetas)
      for (double v : t.data()) sq += v * v;
    const double manual = l.subgraph.item() + l.node.item() + 1e-4 * sq;
    worst = std::max(worst, std::abs(total - manual));
  }
  const ModelConfig defaults;
  const HeadParams head = make_head_params(8, {4}, 2);
  const bool lambdas = defaults.lambda1 == 10.0 && defaults.lambda2 == 1e-4 &&
                       head.lambda1 == 10.0 && head.lambda2 == 1e-4;
  std::ostringstream d;
  d << "20 random models, max |total - (L_g + L_n + lambda2 sum theta^2)| = " << worst
    << "; defaults lambda1 = " << defaults.lambda1 << ", lambda2 = " << defaults.lambda2;
  return {worst < 1e-12 && lambdas, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    }
  }
  const fs::path work = fs::temp_directory_path() / ("sgdet_acceptance_" + std::to_string(::getpid()));

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"temporal stream equals kernel-3 convolution", equivalence},
      {"gradient audit", gradient_audit},
      {"anchor enumeration", anchors},
      {"alignment resampling oracle", alignment_oracle},
      {"IoU and AP oracles", iou_ap_oracles},
      {"Soft-NMS properties", soft_nms_properties},
      {"synthetic end-to-end benchmark", [&] { return end_to_end(work); }},
      {"loss composition", loss_composition},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << "): " << v.detail << std::endl;
  }
  std::error_code ec;
  fs::remove_all(work, ec);
  return failures == 0 ? 0 : 1;
}
