// Acceptance checks. `powerlink_acceptance` runs every criterion;
// `powerlink_acceptance N` runs only criterion N. One PASS/FAIL line each;
// the exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "powerlink/error.hpp"
#include "powerlink/explainer.hpp"
#include "powerlink/harness.hpp"
#include "powerlink/memory.hpp"
#include "powerlink/metrics.hpp"
#include "powerlink/paths.hpp"
#include "support.hpp"

using namespace powerlink;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --------------------------------------------------------------------------
// 1. Powering chain against walk enumeration.

Outcome powering_oracle() {
  const auto t0 = Clock::now();
  constexpr std::size_t kOrder = 4;
  std::size_t graphs = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; graphs < 250; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 7;
    auto gc = testkit::random_gc(rng, n, 0.2 + 0.4 * std::uniform_real_distribution<>(0, 1)(rng), 2, seed % 2 == 0);
    std::vector<double> vals(gc.adjacency().nnz());
    for (auto& v : vals) v = std::uniform_real_distribution<>(0.0, 1.0)(rng);
    const auto m = EdgeScoreMatrix::from_pair_values(gc, vals);
    const LocalIndex s = gc.head_index();

    // sums[l][j] and counts[l][j] over every walk of length l from s.
    std::vector<std::vector<double>> sums(kOrder + 1, std::vector<double>(n, 0.0));
    std::vector<std::vector<std::uint64_t>> counts(kOrder + 1, std::vector<std::uint64_t>(n, 0));
    std::function<void(LocalIndex, std::size_t, double)> walk = [&](LocalIndex at, std::size_t len, double prod) {
      if (len > 0) {
        sums[len][at] += prod;
        ++counts[len][at];
      }
      if (len == kOrder) return;
      for (LocalIndex j = 0; j < n; ++j)
        if (auto v = m.at(at, j)) walk(j, len + 1, prod * *v);
    };
    walk(s, 0, 1.0);

    const auto a = adjacency_power_row(gc, s, kOrder);
    PowerVector u = power_start(m, s);
    double p_on = 0.0;
    for (std::size_t l = 1; l <= kOrder; ++l) {
      if (l > 1) u = power_step(u, m);
      const auto norm = normalize_power(u, a[l - 1]);
      for (LocalIndex j = 0; j < n; ++j) {
        if (a[l - 1][j] != counts[l][j]) return {false, fmt("walk count mismatch at graph %zu", graphs)};
        worst = std::max(worst, std::abs(u.u[j] - sums[l][j]));
        const double expect =
            counts[l][j] ? std::pow(sums[l][j] / static_cast<double>(counts[l][j]), 1.0 / static_cast<double>(l))
                         : 0.0;
        worst = std::max(worst, std::abs(norm[j] - expect));
      }
      if (counts[l][gc.tail_index()])
        p_on += std::pow(sums[l][gc.tail_index()] / static_cast<double>(counts[l][gc.tail_index()]),
                         1.0 / static_cast<double>(l));
    }
    worst = std::max(worst, std::abs(on_path_probability(m, gc, kOrder) - p_on / kOrder));
    ++graphs;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, fmt("%zu graphs, max abs error %.3g, %.2fs", graphs, worst, secs)};
}

// --------------------------------------------------------------------------
// 2. Tape gradients of the three losses against central differences.

Outcome gradient_check() {
  const auto t0 = Clock::now();
  ad::FiniteDiffOptions opts;
  opts.step = 1e-5;
  opts.tol = 1e-4;
  double worst = 0.0;
  std::size_t compared = 0, skipped = 0, instances = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PlantedConfig pc;
    pc.seed = seed;
    const auto inst = generate_planted(pc);
    TrainConfig tc;
    tc.shape.dim = 4;
    tc.epochs = 100;
    tc.lr = 1.0;
    tc.holdout = 0.3;
    tc.seed = seed;
    const auto model = train_kgc(inst.graph, tc).model;
    PipelineConfig cfg;
    cfg.explainer.seed = seed;
    const auto gc = prepare_graph(inst.graph, inst.target.triple, cfg);
    ExplanationProblem problem(model, gc, inst.target, cfg.explainer);
    TesParams tes(cfg.explainer.combine, model.dim(), seed);
    using Pick = ad::Var LossVars::*;
    for (Pick pick : {&LossVars::path, &LossVars::prediction, &LossVars::total}) {
      const auto rep =
          ad::finite_diff_check([&](ad::Tape& t) { return problem.build(t, tes).*pick; }, tes.params(), opts);
      worst = std::max(worst, rep.max_rel_error);
      compared += rep.compared;
      skipped += rep.skipped_nonsmooth;
      if (!rep.passed) return {false, fmt("instance %llu: max relative error %.3g", (unsigned long long)seed,
                                          rep.max_rel_error)};
    }
    ++instances;
  }
  const double secs = seconds_since(t0);
  return {secs < 60.0, fmt("%zu instances, %zu entries compared (%zu on rectifier kinks skipped), max relative "
                           "error %.3g, %.1fs",
                           instances, compared, skipped, worst, secs)};
}

// --------------------------------------------------------------------------
// 3, 4, 8. Planted suites.

const ModeSummary& summary_of(const SuiteReport& r, SuiteMode m) {
  for (const auto& s : r.summaries)
    if (s.mode == m) return s;
  throw ContractError("mode missing from suite report");
}

Outcome default_recovery() {
  const auto t0 = Clock::now();
  SuiteConfig c;
  c.modes = {SuiteMode::kFull};
  c.workers = 4;
  const auto r = run_suite(c);
  const double rec = summary_of(r, SuiteMode::kFull).recovery;
  const double secs = seconds_since(t0);
  return {rec >= 0.9 && secs < 300.0, fmt("top-1 recovery %.3f over %zu instances, %.1fs", rec, c.instances, secs)};
}

// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

Outcome ablation_sign_test() {
  const auto t0 = Clock::now();
  constexpr std::size_t kSeeds = 20;
  std::size_t win_path = 0, loss_path = 0, win_mi = 0, loss_mi = 0;
  double mean_full = 0.0, mean_path = 0.0, mean_mi = 0.0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    SuiteConfig c;
    c.seed = 1000 * (s + 1);
    c.workers = 4;
    const auto r = run_suite(c);
    const double full = summary_of(r, SuiteMode::kFull).report.h_delta_r[0];
    const double np = summary_of(r, SuiteMode::kNoPath).report.h_delta_r[0];
    const double nm = summary_of(r, SuiteMode::kNoMi).report.h_delta_r[0];
    mean_full += full / kSeeds;
    mean_path += np / kSeeds;
    mean_mi += nm / kSeeds;
    win_path += full > np;
    loss_path += full < np;
    win_mi += full > nm;
    loss_mi += full < nm;
  }
  const double p_path = sign_test(win_path, loss_path);
  const double p_mi = sign_test(win_mi, loss_mi);
  return {p_path < 0.05 && p_mi < 0.05,
          fmt("HDR:1 mean full %.3f, no_path %.3f, no_mi %.3f; vs no_path %zu/%zu wins p=%.3g; vs no_mi %zu/%zu "
              "wins p=%.3g; %zu seeds, %.1fs",
              mean_full, mean_path, mean_mi, win_path, win_path + loss_path, p_path, win_mi, win_mi + loss_mi, p_mi,
              kSeeds, seconds_since(t0))};
}

Outcome path_length_ordering() {
  const auto t0 = Clock::now();
  std::map<std::size_t, double> rec;
  for (std::size_t order : {2, 3, 4}) {
    SuiteConfig c;
    c.planted.path_len = 4;
    c.pipeline.hops = 2;
    c.pipeline.explainer.power_order = order;
    c.modes = {SuiteMode::kFull};
    c.workers = 4;
    rec[order] = summary_of(run_suite(c), SuiteMode::kFull).recovery;
  }
  return {rec[4] >= rec[3] && rec[3] >= rec[2],
          fmt("recovery L=2 %.3f, L=3 %.3f, L=4 %.3f, %.1fs", rec[2], rec[3], rec[4], seconds_since(t0))};
}

// --------------------------------------------------------------------------
// 5. Metric identities.

Outcome metric_identities() {
  std::size_t checks = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PlantedConfig pc;
    pc.seed = seed;
    const auto inst = generate_planted(pc);
    TrainConfig tc;
    tc.epochs = 50;
    tc.seed = seed;
    const auto model = train_kgc(inst.graph, tc).model;
    PipelineConfig cfg;
    const auto gc = prepare_graph(inst.graph, inst.target.triple, cfg);
    const auto& t = inst.target;
    if (fidelity_minus(model, gc, EdgeScoreMatrix::uniform(gc, 1.0), t) != 0.0)
      return {false, fmt("seed %llu: F- of the all-ones mask is not 0", (unsigned long long)seed)};
    if (fidelity_plus(model, gc, EdgeScoreMatrix::uniform(gc, 0.0), t) != 0.0)
      return {false, fmt("seed %llu: F+ of the all-zeros mask is not 0", (unsigned long long)seed)};
    if (sparsity(EdgeScoreMatrix::uniform(gc, 1.0), gc) != 0.0 || sparsity(EdgeScoreMatrix::uniform(gc, 0.0), gc) != 1.0)
      return {false, fmt("seed %llu: sparsity anchors", (unsigned long long)seed)};
    const Explanation none{t, {}, EdgeScoreMatrix::uniform(gc, 0.5), {}};
    for (std::size_t m : kHitLevels)
      if (!h_delta_r(model, gc, none, m)) return {false, "HDR tie without paths is not a hit"};
    checks += 4 + kHitLevels.size();
  }
  return {true, fmt("%zu exact identity checks", checks)};
}

// --------------------------------------------------------------------------
// 6. Dijkstra and k-core oracles.

double brute_cheapest(const CsrPattern& p, std::span<const double> v, LocalIndex from, LocalIndex to) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> seen(p.rows, 0);
  std::function<void(LocalIndex, double)> go = [&](LocalIndex u, double cost) {
    if (u == to) {
      best = std::min(best, cost);
      return;
    }
    seen[u] = 1;
    for (std::size_t k = p.row_ptr[u]; k < p.row_ptr[u + 1]; ++k)
      if (!seen[p.col_idx[k]]) go(p.col_idx[k], cost + 1.0 / v[k]);
    seen[u] = 0;
  };
  go(from, 0.0);
  return best;
}

std::set<EntityId> kcore_oracle(const ComputationGraph& gc, std::size_t k) {
  std::set<LocalIndex> alive;
  for (LocalIndex i = 0; i < gc.num_nodes(); ++i) alive.insert(i);
  for (bool changed = true; changed;) {
    changed = false;
    for (LocalIndex v : std::set<LocalIndex>(alive)) {
      if (v == gc.head_index() || v == gc.tail_index()) continue;
      std::set<LocalIndex> nb;
      for (const auto& e : gc.edges()) {
        if (e.head == e.tail) continue;
        if (e.head == v && alive.count(e.tail)) nb.insert(e.tail);
        if (e.tail == v && alive.count(e.head)) nb.insert(e.head);
      }
      if (nb.size() < k) {
        alive.erase(v);
        changed = true;
      }
    }
  }
  std::set<EntityId> out;
  for (auto i : alive) out.insert(gc.global_of(i));
  return out;
}

Outcome graph_oracles() {
  std::size_t dijkstra = 0, kcore = 0;
  for (std::uint64_t seed = 0; dijkstra < 600; ++seed) {
    std::mt19937_64 rng(seed);
    auto gc = testkit::random_gc(rng, 2 + seed % 7, 0.3);
    const auto& p = gc.adjacency();
    std::vector<double> v(p.nnz());
    for (auto& x : v) x = std::uniform_real_distribution<>(0.01, 1.0)(rng);
    const std::vector<char> alive(p.nnz(), 1);
    const auto got = cheapest_path(p, v, alive, gc.head_index(), gc.tail_index());
    const double expect = brute_cheapest(p, v, gc.head_index(), gc.tail_index());
    if (std::isinf(expect) != got.empty()) return {false, fmt("dijkstra reachability differs, seed %llu", (unsigned long long)seed)};
    if (!got.empty()) {
      double cost = 0.0;
      for (std::size_t i = 0; i + 1 < got.size(); ++i) cost += 1.0 / v[*p.find(got[i], got[i + 1])];
      if (std::abs(cost - expect) > 1e-9 * expect)
        return {false, fmt("dijkstra cost %.12g vs %.12g, seed %llu", cost, expect, (unsigned long long)seed)};
    }
    ++dijkstra;
  }
  for (std::uint64_t seed = 0; kcore < 600; ++seed) {
    std::mt19937_64 rng(seed);
    auto gc = testkit::random_gc(rng, 2 + seed % 39, 0.02 + 0.2 * std::uniform_real_distribution<>(0, 1)(rng), 2, true);
    const std::size_t k = seed % 5;
    const auto pruned = k_core_prune(gc, k);
    if (std::set<EntityId>(pruned.nodes().begin(), pruned.nodes().end()) != kcore_oracle(gc, k))
      return {false, fmt("k-core differs, seed %llu", (unsigned long long)seed)};
    ++kcore;
  }
  return {true, fmt("%zu shortest-path cases (n<=8), %zu k-core cases (n<=40)", dijkstra, kcore)};
}

// --------------------------------------------------------------------------
// 7. Auxiliary memory of one explanation job against graph size.

Outcome memory_scaling() {
  std::vector<double> xs, ys;
  KgcModel model(1, 2, {}, 0);
  for (std::size_t edges : {1000, 10000, 100000}) {
    // Sparse random graph with a fixed average degree of 10.
    const std::size_t n = edges / 5;
    std::mt19937_64 rng(edges);
    std::uniform_int_distribution<LocalIndex> node(0, static_cast<LocalIndex>(n - 1));
    std::set<std::pair<LocalIndex, LocalIndex>> pairs;
    std::vector<LocalEdge> es;
    while (es.size() < edges) {
      const LocalIndex a = node(rng), b = node(rng);
      if (a == b || !pairs.insert({a, b}).second) continue;
      es.push_back({a, static_cast<RelationId>(rng() & 1U), b, es.size()});
    }
    std::vector<EntityId> nodes(n);
    for (std::size_t i = 0; i < n; ++i) nodes[i] = static_cast<EntityId>(i);
    const ComputationGraph gc(nodes, es, 0, 1);
    KgcModel m(n, 2, {}, 0);
    ExplainerConfig c;
    c.epochs = 1;
    MemoryMeter::reset_peak();
    const std::size_t base = MemoryMeter::current();
    train_explainer(m, gc, {{0, 0, 1}, Label::kFactual}, c);
    xs.push_back(static_cast<double>(edges));
    ys.push_back(static_cast<double>(MemoryMeter::peak() - base));
  }
  const double mx = (xs[0] + xs[1] + xs[2]) / 3, my = (ys[0] + ys[1] + ys[2]) / 3;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double r2 = sxy * sxy / (sxx * syy);
  return {r2 >= 0.99, fmt("peak bytes %.0f / %.0f / %.0f at 1k/10k/100k edges, linear fit R^2 %.6f", ys[0], ys[1],
                          ys[2], r2)};
}

// --------------------------------------------------------------------------
// 9. Repeat runs give identical bytes.

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(f), {}};
  }
  return out;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "powerlink_acceptance_repeat";
  fs::remove_all(base);
  auto run = [&](const fs::path& dir, std::size_t workers) {
    SuiteConfig c;
    c.instances = 4;
    c.workers = workers;
    write_suite_outputs(dir / "suite", c, run_suite(c));

    PlantedConfig pc;
    pc.seed = 7;
    const auto inst = generate_planted(pc);
    TrainConfig tc = c.train;
    tc.seed = 7;
    const auto model = train_kgc(inst.graph, tc).model;
    save_checkpoint(dir / "model.plnk", model, inst.graph);
    BatchConfig bc;
    bc.sample_count = 5;
    bc.workers = workers;
    bc.pipeline.explainer.epochs = 20;
    const auto batch = evaluate_batch(model, inst.graph, inst.graph.triples(), bc);
    write_metrics_csv(dir / "metrics.csv", batch.rows);
    std::ofstream(dir / "metrics.json", std::ios::binary) << to_json(batch.report).dump(2);
  };
  run(base / "a", 1);
  run(base / "b", 1);
  run(base / "c", 3);
  const auto a = read_tree(base / "a");
  const auto b = read_tree(base / "b");
  const auto c = read_tree(base / "c");
  fs::remove_all(base);
  if (a != b) return {false, "outputs differ between two identical runs"};
  // The worker count itself is echoed into config blocks; everything else
  // must match.
  auto without_workers = [](std::map<std::string, std::string> tree) {
    for (auto& [name, text] : tree) {
      if (name.size() < 5 || name.substr(name.size() - 5) != ".json") continue;
      auto j = nlohmann::json::parse(text);
      j.erase("workers");
      if (j.contains("config")) j["config"].erase("workers");
      text = j.dump();
    }
    return tree;
  };
  if (without_workers(a) != without_workers(c)) return {false, "outputs differ between 1 and 3 workers"};
  return {true, fmt("%zu files identical across 3 runs (1, 1 and 3 workers)", a.size())};
}

const std::map<int, std::pair<const char*, Outcome (*)()>> kCriteria = {
    {1, {"powering oracle", powering_oracle}},
    {2, {"loss gradients vs finite differences", gradient_check}},
    {3, {"default suite top-1 recovery", default_recovery}},
    {4, {"HDR:1 ablation sign test", ablation_sign_test}},
    {5, {"metric identities", metric_identities}},
    {6, {"shortest-path and k-core oracles", graph_oracles}},
    {7, {"memory linear in edges", memory_scaling}},
    {8, {"recovery monotone in power order", path_length_ordering}},
    {9, {"byte-identical repeats", determinism}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [k, _] : kCriteria) which.push_back(k);
  bool all = true;
  for (int k : which) {
    auto it = kCriteria.find(k);
    if (it == kCriteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s: %s\n", k, o.pass ? "PASS" : "FAIL", it->second.first, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
