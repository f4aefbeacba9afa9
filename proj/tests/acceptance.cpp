// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace convtext;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr int kGradSeeds = 3;
constexpr double kOracleTol = 1e-12;
constexpr int kKMaxCases = 200;
constexpr double kSaturationTol = 1e-6;
constexpr double kOrderGap = 1e-3;
constexpr std::size_t kDeskEpochs = 60;
constexpr double kGateTarget = 0.95;
constexpr double kFastTextCeiling = 0.90;
constexpr double kParamTableSeconds = 1.0;
constexpr double kGradSeconds = 120.0;
constexpr double kDeskSeconds = 300.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail
            << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "convtext");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Data rows of a metrics log: epoch -> val accuracy.
std::vector<double> val_accuracies(const fs::path& metrics) {
  std::vector<double> out;
  std::istringstream is(slurp(metrics));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double epoch, loss, train_acc, val_acc;
    ls >> epoch >> loss >> train_acc >> val_acc;
    out.push_back(val_acc);
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome param_table() {
  const auto t0 = Clock::now();
  const auto r = cli_run({"params", "--all-table3"});
  const double secs = seconds_since(t0);
  const std::map<std::string, std::uint64_t> expected = {
      {"CNN Non-Inception", 1845248},
      {"CNN Inception (word)", 2152448},
      {"CNN Inception + Gate", 4304896},
      {"LSTM (baseline)", 13819904}};
  std::size_t matched = 0;
  std::istringstream is(r.out);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() != 5) continue;
    auto it = expected.find(cols[0]);
    if (it != expected.end() && cols[2] == std::to_string(it->second) && cols[4] == "MATCH") ++matched;
  }
  const bool ok = r.code == 0 && matched == 4 && secs < kParamTableSeconds;
  return {ok, std::to_string(matched) + "/4 rows exact, " + fmt("%.3f s", secs)};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  int checked = 0;
  bool ok = true;
  for (auto v : kAllVariants) {
    const auto cfg = tiny_config(v);
    for (int seed = 1; seed <= kGradSeeds; ++seed) {
      Model<double> m(cfg, 3, static_cast<std::uint64_t>(seed));
      Rng rng(static_cast<std::uint64_t>(1000 + seed));
      const auto in = random_input(cfg, rng, 6);
      const auto r = grad_check(m, in, static_cast<std::size_t>(seed) % 3, kGradEps, kGradTol);
      ++checked;
      ok = ok && r.passed;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = std::string(variant_name(v)) + " seed " + std::to_string(seed);
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && worst < kGradTol && secs < kGradSeconds;
  return {ok, std::to_string(checked) + " checks (11 variants x " + std::to_string(kGradSeeds) +
                  " seeds), max rel err " + fmt("%.3g", worst) + " (" + worst_name + ") < " +
                  fmt("%.0e", kGradTol) + ", " + fmt("%.1f s", secs)};
}

Outcome oracles() {
  Rng rng(20240601);
  double conv_worst = 0;
  std::size_t conv_cases = 0;
  for (std::size_t T = 1; T <= 8; ++T) {
    for (std::size_t w = 1; w <= 5; ++w) {
      for (std::size_t cin = 1; cin <= 4; ++cin) {
        for (std::size_t cout = 1; cout <= 4; ++cout) {
          const auto x = oracle::random_tensor({T, cin}, rng);
          const auto k = oracle::random_tensor({w, cin, cout}, rng);
          const auto b = oracle::random_tensor({cout}, rng);
          const auto got = oracle::to_mat(conv1d_forward(x, k, b));
          const auto ref = oracle::conv1d(oracle::to_mat(x), oracle::to_kernel(k),
                                          std::vector<double>(b.data().begin(), b.data().end()));
          conv_worst = std::max(conv_worst, oracle::max_abs_diff(got, ref));
          ++conv_cases;
        }
      }
    }
  }
  double kmax_worst = 0;
  std::size_t ties = 0;
  for (int c = 0; c < kKMaxCases; ++c) {
    const std::size_t T = 1 + rng.below(8), ch = 1 + rng.below(4), k = 1 + rng.below(T + 1);
    Tensor<double> x({T, ch});
    // Values from a small grid so ties are common.
    for (auto& v : x.data()) v = static_cast<double>(static_cast<int>(rng.below(5)) - 2) * 0.5;
    Mask mask(T);
    for (std::size_t t = 0; t < T; ++t) mask[t] = rng.below(4) != 0;
    mask[rng.below(T)] = true;
    for (std::size_t cc = 0; cc < ch; ++cc) {
      std::map<double, int> seen;
      for (std::size_t t = 0; t < T; ++t) {
        if (mask[t] && ++seen[x(t, cc)] == 2) ++ties;
      }
    }
    const auto got = kmax_pool_forward(x, k, mask);
    kmax_worst = std::max(kmax_worst, oracle::max_abs_diff(oracle::to_mat(got.output),
                                                          oracle::kmax(oracle::to_mat(x), k, mask)));
    // The recorded positions must point at the emitted values.
    for (std::size_t s = 0; s < k; ++s) {
      for (std::size_t cc = 0; cc < ch; ++cc) {
        const auto p = got.positions[s * ch + cc];
        const double v = p < 0 ? 0.0 : x(static_cast<std::size_t>(p), cc);
        kmax_worst = std::max(kmax_worst, std::abs(v - got.output(s, cc)));
      }
    }
  }
  const bool ok = conv_cases == 8 * 5 * 4 * 4 && conv_worst <= kOracleTol && kmax_worst <= kOracleTol;
  return {ok, "conv " + std::to_string(conv_cases) + " shapes max diff " + fmt("%.2g", conv_worst) +
                  "; k-max " + std::to_string(kKMaxCases) + " cases (" + std::to_string(ties) +
                  " tied values) max diff " + fmt("%.2g", kmax_worst) + "; tol " +
                  fmt("%.0e", kOracleTol)};
}

Outcome gate_saturation() {
  double worst = 0;
  std::size_t comps = 0;
  std::vector<ExtractorConfig> configs = {tiny_config(Variant::InceptionGate)};
  auto mid = ExtractorConfig::for_variant(Variant::InceptionGate);
  mid.embed_dim = 32;
  mid.inception = InceptionSpec::parse("2(16)+3(16)+4(16)+5(16)");
  mid.word_vocab_size = 50;
  configs.push_back(mid);
  for (const auto& gate_cfg : configs) {
    auto word_cfg = gate_cfg;
    word_cfg.variant = Variant::InceptionWord;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Extractor<double> gate(gate_cfg, seed);
      for (auto& p : gate.mutable_parameters()) {
        if (p.name.find(".gate_weight") != std::string::npos) p.value.fill(0.0);
        if (p.name.find(".gate_bias") != std::string::npos) p.value.fill(20.0);
      }
      Extractor<double> word(word_cfg, seed + 100);
      for (auto& p : word.mutable_parameters()) p.value = gate.parameter(p.name).value;
      Rng rng(seed * 7);
      for (int i = 0; i < 10; ++i) {
        const auto in = random_input(gate_cfg, rng, 10);
        const auto a = extract(gate, in), b = extract(word, in);
        worst = std::max(worst, max_abs_diff(a, b));
        comps += a.size();
      }
    }
  }
  return {worst < kSaturationTol, std::to_string(comps) + " components, max |diff| " +
                                      fmt("%.3g", worst) + " < " + fmt("%.0e", kSaturationTol)};
}

Outcome invariants() {
  bool pad_ok = true, perm_ok = true;
  std::size_t pad_cases = 0, perm_cases = 0;
  for (auto v : kAllVariants) {
    const auto cfg = tiny_config(v);
    Extractor<double> e(cfg, 3);
    Rng rng(static_cast<std::uint64_t>(v) + 11);
    for (int trial = 0; trial < 10; ++trial) {
      const auto in = random_input(cfg, rng, 8);
      const auto base = extract(e, in);
      std::size_t wcl = 1;
      for (const auto& wc : in.word_chars) wcl = std::max(wcl, wc.padded_length());
      for (std::size_t extra : {1u, 3u, 9u}) {
        const auto padded = pad_input(in, in.words.padded_length() + extra,
                                      in.chars.padded_length() + extra, wcl + extra);
        pad_ok = pad_ok && extract(e, padded) == base;
        ++pad_cases;
      }
      if (is_fasttext(v)) {
        std::vector<std::size_t> perm(in.words.true_length);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        ModelInput p = in;
        for (std::size_t i = 0; i < perm.size(); ++i) {
          p.words.indices[i] = in.words.indices[perm[i]];
          p.word_chars[i] = in.word_chars[perm[i]];
        }
        perm_ok = perm_ok && extract(e, p) == base;
        ++perm_cases;
      }
    }
  }

  // Bag-of-words twins from the order-sensitive generator.
  const auto corpus = generate_synth({7, 750, 6, true});
  std::vector<Tokens> toks;
  for (const auto& q : corpus) toks.push_back(tokenize(q.text));
  const auto words = build_word_vocab(toks);
  const auto chars = build_char_vocab();
  const auto a = encode_input(words, chars, toks[2]);
  const auto b = encode_input(words, chars, toks[5]);
  double min_conv_gap = 1e300, max_fasttext_gap = 0;
  for (auto v : kAllVariants) {
    auto cfg = tiny_config(v);
    cfg.word_vocab_size = words.size();
    cfg.char_vocab_size = chars.size();
    Extractor<double> e(cfg, 5);
    const double gap = max_abs_diff(extract(e, a), extract(e, b));
    if (is_fasttext(v)) max_fasttext_gap = std::max(max_fasttext_gap, gap);
    else min_conv_gap = std::min(min_conv_gap, gap);
  }
  const bool ok = pad_ok && perm_ok && max_fasttext_gap == 0.0 && min_conv_gap > kOrderGap;
  return {ok, std::string("padding exact ") + (pad_ok ? "yes" : "NO") + " (" +
                  std::to_string(pad_cases) + " cases); fastText permutation exact " +
                  (perm_ok ? "yes" : "NO") + " (" + std::to_string(perm_cases) +
                  " cases); twin pair: fastText gap " + fmt("%.3g", max_fasttext_gap) +
                  ", smallest conv gap " + fmt("%.3g", min_conv_gap) + " > " +
                  fmt("%.0e", kOrderGap)};
}

Outcome desk_scale(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto data = (work / "synth.tsv").string();
  if (cli_run({"synth", "--seed", "7", "--size", "750", "--classes", "6", "--order-sensitive",
               "--out", data}).code != 0) {
    return {false, "synth failed"};
  }
  const fs::path configs = CONVTEXT_SOURCE_DIR "/configs";
  auto run_one = [&](const char* cfg, const char* out) {
    const auto r = cli_run({"train", "--config", (configs / cfg).string(), "--data", data, "--out",
                            (work / out).string(), "--epochs", std::to_string(kDeskEpochs)});
    if (r.code != 0) std::cerr << r.err;
    return r.code == 0;
  };
  if (!run_one("desk_gate.cfg", "gate") || !run_one("desk_fasttext.cfg", "fasttext")) {
    return {false, "training failed"};
  }
  const double secs = seconds_since(t0);
  const auto gate = val_accuracies(work / "gate" / "metrics.tsv");
  const auto ft = val_accuracies(work / "fasttext" / "metrics.tsv");
  const auto metrics = slurp(work / "gate" / "metrics.tsv");
  const bool split_ok = metrics.find("# data.train_size = 600\n") != std::string::npos &&
                        metrics.find("# data.val_size = 150\n") != std::string::npos;
  const double gate_best = gate.empty() ? 0 : *std::max_element(gate.begin(), gate.end());
  const double ft_best = ft.empty() ? 1 : *std::max_element(ft.begin(), ft.end());
  std::size_t first_hit = 0;
  for (std::size_t i = 0; i < gate.size(); ++i) {
    if (gate[i] >= kGateTarget) {
      first_hit = i + 1;
      break;
    }
  }
  const bool ok = split_ok && gate.size() == kDeskEpochs && ft.size() == kDeskEpochs &&
                  gate_best >= kGateTarget && ft_best <= kFastTextCeiling && secs < kDeskSeconds;
  return {ok, std::string("600/150 split ") + (split_ok ? "yes" : "NO") + "; Inception+Gate best val " +
                  fmt("%.4f", gate_best) + " (>= " + fmt("%.2f", kGateTarget) + " first at epoch " +
                  std::to_string(first_hit) + "); fastText best val " + fmt("%.4f", ft_best) +
                  " (<= " + fmt("%.2f", kFastTextCeiling) + "); " + fmt("%.1f s", secs)};
}

Outcome consensus() {
  // Expected min(n/3, 1) as fractions p/q.
  const std::size_t expect[5][2] = {{0, 3}, {1, 3}, {2, 3}, {3, 3}, {3, 3}};
  bool ok = true;
  std::string got;
  for (std::size_t n = 0; n <= 4; ++n) {
    std::vector<std::string> gt(10, "no");
    for (std::size_t i = 0; i < n; ++i) gt[i * 2] = "yes";
    const auto s = vqa_consensus_score("yes", gt);
    // p/q == a/b  <=>  p*b == a*q
    ok = ok && s.numerator() * expect[n][1] == expect[n][0] * s.denominator();
    ok = ok && vqa_consensus_accuracy("yes", gt) ==
                   static_cast<double>(expect[n][0]) / static_cast<double>(expect[n][1]);
    if (n) got += ", ";
    got += std::to_string(s.numerator()) + "/" + std::to_string(s.denominator());
  }
  return {ok, "match counts 0..4 -> {" + got + "}"};
}

Outcome determinism(const fs::path& work) {
  const auto data = (work / "det.tsv").string();
  cli_run({"synth", "--seed", "11", "--size", "120", "--order-sensitive", "--out", data});
  const fs::path cfg = CONVTEXT_SOURCE_DIR "/configs/desk_gate.cfg";
  std::string eval_out[2];
  for (int i = 0; i < 2; ++i) {
    const auto dir = work / ("det" + std::to_string(i));
    if (cli_run({"train", "--config", cfg.string(), "--data", data, "--out", dir.string(),
                 "--epochs", "4", "--seed", "5"}).code != 0) {
      return {false, "training failed"};
    }
    const auto e = cli_run({"eval", "--checkpoint", (dir / "checkpoint.bin").string(), "--vocab",
                            (dir / "vocab.txt").string(), "--data", data});
    if (e.code != 0) return {false, "eval failed"};
    eval_out[i] = e.out;
  }
  bool ok = eval_out[0] == eval_out[1];
  std::string detail;
  for (const char* f : {"metrics.tsv", "checkpoint.bin", "vocab.txt"}) {
    const auto a = slurp(work / "det0" / f), b = slurp(work / "det1" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(f) + " " + (same ? "identical" : "DIFFERENT") + " (" +
              std::to_string(a.size()) + " bytes); ";
  }
  return {ok, detail + "eval output " + (eval_out[0] == eval_out[1] ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "convtext_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "parameter counts", param_table());
  report(2, "gradient verification", gradients());
  report(3, "conv1d and k-max oracles", oracles());
  report(4, "gate saturation", gate_saturation());
  report(5, "padding and order invariants", invariants());
  report(6, "desk-scale comparison", desk_scale(work));
  report(7, "consensus metric", consensus());
  report(8, "determinism", determinism(work));

  fs::remove_all(work);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
