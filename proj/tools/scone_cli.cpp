// Command-line front end for the pipeline:
//   discover -> tag -> train -> bake -> eval / bench / parity / gradcheck
// plus a self-contained `demo` that runs every stage on a synthetic corpus.
//
// Configuration is a flat key=value text file; the flags below override it.
// Every stage appends one manifest line recording input fingerprints, wall
// time, and its key outputs, and commits artifacts via write-then-rename.

#include <chrono>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scone/scone.hpp"

namespace {

using namespace scone;

// ---------------------------------------------------------------------------
// Flat key=value configuration.

struct Config {
  std::map<std::string, std::string> values;

  static Config load(const std::filesystem::path& path) {
    Config cfg;
    auto data = read_file(path);
    std::string text(reinterpret_cast<const char*>(data.data()), data.size());
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
      cfg.values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }
  void set(const std::string& key, std::string value) { values[key] = std::move(value); }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }
  std::string required(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end() || it->second.empty())
      throw ValidationError("config: missing required key '" + key + "'");
    return it->second;
  }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : std::stoull(it->second);
  }
  double f64(const std::string& key, double fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : std::stod(it->second);
  }
  bool flag(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    return it->second == "1" || it->second == "true" || it->second == "yes";
  }
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

CorpusFormat corpus_format(const Config& cfg) {
  std::string f = cfg.str("corpus_format", "binary-u32");
  if (f == "binary-u32") return CorpusFormat::binary_u32;
  if (f == "text-ids") return CorpusFormat::text_ids;
  throw ValidationError("config: corpus_format must be binary-u32 or text-ids");
}

ModelConfig model_config(const Config& cfg) {
  ModelConfig m;
  m.d_model = static_cast<std::uint32_t>(cfg.u64("d_model", 64));
  m.n_layers = static_cast<std::uint32_t>(cfg.u64("n_layers", 2));
  m.fgram_n_layers = static_cast<std::uint32_t>(cfg.u64("fgram_n_layers", 2));
  m.ffw_size = static_cast<std::uint32_t>(cfg.u64("ffw_size", 4 * m.d_model));
  m.n_heads = static_cast<std::uint32_t>(cfg.u64("n_heads", 2));
  m.max_seq_len = static_cast<std::uint32_t>(cfg.u64("max_seq_len", 128));
  m.vocab_size = static_cast<std::uint32_t>(cfg.u64("vocab_size", 256));
  m.fgram_n_max = static_cast<std::uint32_t>(cfg.u64("fgram_n_max", cfg.u64("n_max", 3)));
  m.weight_tying = cfg.flag("weight_tying", false);
  auto precision = dtype_from_name(cfg.str("precision", "fp32"));
  require(precision.has_value() && *precision != Dtype::f16,
          "config: precision must be fp32 or fp64");
  m.precision = *precision;
  m.validate();
  return m;
}

StoreBackend backend_from(const Config& cfg) {
  std::string b = cfg.str("backend", "memory");
  if (b == "memory") return StoreBackend::memory;
  if (b == "disk") return StoreBackend::disk;
  throw ValidationError("config: backend must be memory or disk");
}

// ---------------------------------------------------------------------------
// Manifest log.

class Manifest {
 public:
  explicit Manifest(std::filesystem::path path) : path_(std::move(path)) {}

  void line(const std::string& stage,
            const std::vector<std::pair<std::string, std::string>>& fields) {
    std::string text = "stage=" + stage;
    for (const auto& [k, v] : fields) text += " " + k + "=" + v;
    std::ofstream out(path_, std::ios::app);
    out << text << "\n";
    std::cout << text << "\n";
  }

 private:
  std::filesystem::path path_;
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string ms() const {
    auto d = std::chrono::steady_clock::now() - start;
    return std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(d).count());
  }
};

std::string fp_hex(std::uint64_t fp) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

// ---------------------------------------------------------------------------
// Stages.

int run_discover(const Config& cfg, Manifest& manifest) {
  Timer timer;
  Vocabulary vocab_tokens(static_cast<std::uint32_t>(cfg.u64("vocab_size", 256)));
  auto corpus = load_corpus(cfg.required("corpus"), corpus_format(cfg), vocab_tokens);
  std::uint32_t n_max = static_cast<std::uint32_t>(cfg.u64("n_max", 5));
  std::uint64_t S = cfg.u64("num_fgrams", 1024);
  std::uint64_t min_count = cfg.u64("min_count", 5);
  std::optional<std::uint64_t> first_scan;
  if (cfg.has("min_count_first_scan")) first_scan = cfg.u64("min_count_first_scan", min_count);

  auto vocab = build_fgram_vocab(corpus, n_max, S, min_count, first_scan);
  write_fgram_vocab(cfg.required("vocab"), vocab);
  manifest.line("discover",
                {{"corpus", fp_hex(fingerprint_file(cfg.required("corpus")))},
                 {"n_max", std::to_string(n_max)},
                 {"num_fgrams", std::to_string(S)},
                 {"min_count", std::to_string(min_count)},
                 {"entries", std::to_string(vocab.size())},
                 {"cutoff_frequency", std::to_string(vocab.cutoff_frequency)},
                 {"short_fall", vocab.short_fall ? "1" : "0"},
                 {"vocab", fp_hex(fingerprint_file(cfg.required("vocab")))},
                 {"wall_ms", timer.ms()}});
  return 0;
}

int run_tag(const Config& cfg, Manifest& manifest) {
  Timer timer;
  Vocabulary vocab_tokens(static_cast<std::uint32_t>(cfg.u64("vocab_size", 256)));
  auto corpus = load_corpus(cfg.required("corpus"), corpus_format(cfg), vocab_tokens);
  auto vocab = load_fgram_vocab(cfg.required("vocab"));
  FGramIndex index(vocab);
  ProbeStats probes;
  auto tags = tag_corpus(index, corpus, &probes);
  write_tags(cfg.required("tags"), tags);
  double avg = corpus.token_count ? avg_match_length(tags) : 1.0;
  char avg_buf[32];
  std::snprintf(avg_buf, sizeof(avg_buf), "%.6f", avg);
  manifest.line("tag", {{"corpus", fp_hex(fingerprint_file(cfg.required("corpus")))},
                        {"vocab", fp_hex(fingerprint_file(cfg.required("vocab")))},
                        {"tokens", std::to_string(corpus.token_count)},
                        {"avg_match_length", avg_buf},
                        {"probes", std::to_string(probes.probes)},
                        {"tags", fp_hex(fingerprint_file(cfg.required("tags")))},
                        {"wall_ms", timer.ms()}});
  return 0;
}

template <typename Scalar>
int run_train_typed(const Config& cfg, Manifest& manifest, const ModelConfig& mc) {
  Timer timer;
  Vocabulary vocab_tokens(mc.vocab_size);
  auto corpus = load_corpus(cfg.required("corpus"), corpus_format(cfg), vocab_tokens);
  auto tags = load_tags(cfg.required("tags"));
  require(tags.size() == corpus.sequences.size(), "train: tags do not match corpus");

  std::uint64_t seed = cfg.u64("seed", 0);
  auto model = init_model<Scalar>(mc, seed);
  TrainOptions opts;
  opts.steps = cfg.u64("steps", 200);
  opts.batch_size = static_cast<std::uint32_t>(cfg.u64("batch_size", 32));
  opts.peak_lr = cfg.f64("peak_lr", 3e-4);
  opts.final_lr_fraction = cfg.f64("final_lr_fraction", 0.1);
  opts.weight_decay = cfg.f64("weight_decay", 0.1);
  opts.beta1 = cfg.f64("beta1", 0.9);
  opts.beta2 = cfg.f64("beta2", 0.95);
  opts.seed = seed;

  auto result = train(model, std::span<const TokenSequence>(corpus.sequences),
                      std::span<const MatchTags>(tags), opts);
  write_checkpoint(cfg.required("checkpoint"), model);

  char loss_buf[32];
  std::snprintf(loss_buf, sizeof(loss_buf), "%.6f",
                result.loss_trace.empty() ? 0.0 : result.loss_trace.back());
  manifest.line("train", {{"corpus", fp_hex(fingerprint_file(cfg.required("corpus")))},
                          {"tags", fp_hex(fingerprint_file(cfg.required("tags")))},
                          {"steps", std::to_string(opts.steps)},
                          {"batch_size", std::to_string(opts.batch_size)},
                          {"seed", std::to_string(seed)},
                          {"final_loss", loss_buf},
                          {"checkpoint", fp_hex(fingerprint_file(cfg.required("checkpoint")))},
                          {"wall_ms", timer.ms()}});
  return 0;
}

int run_train(const Config& cfg, Manifest& manifest) {
  ModelConfig mc = model_config(cfg);
  if (mc.precision == Dtype::f64) return run_train_typed<double>(cfg, manifest, mc);
  return run_train_typed<float>(cfg, manifest, mc);
}

Dtype store_dtype_from(const Config& cfg) {
  auto dtype = dtype_from_name(cfg.str("store_dtype", "fp32"));
  require(dtype.has_value() && *dtype != Dtype::f64,
          "config: store_dtype must be fp32 or fp16");
  return *dtype;
}

int run_bake(const Config& cfg, Manifest& manifest) {
  Timer timer;
  auto data = read_file(cfg.required("checkpoint"));
  ModelConfig mc = peek_checkpoint_config(data);
  auto vocab = load_fgram_vocab(cfg.required("vocab"));
  BakeOptions opts;
  opts.batch_size = static_cast<std::uint32_t>(cfg.u64("bake_batch_size", 64));
  opts.dtype = store_dtype_from(cfg);

  std::uint64_t vocab_fp = fingerprint_file(cfg.required("vocab"));
  std::uint64_t model_fp = fnv1a64(data);
  BakeManifest bm;
  if (mc.precision == Dtype::f64) {
    auto model = decode_checkpoint<double>(data);
    bm = bake_to_files(model, vocab, opts, cfg.required("table"), vocab_fp, model_fp);
  } else {
    auto model = decode_checkpoint<float>(data);
    bm = bake_to_files(model, vocab, opts, cfg.required("table"), vocab_fp, model_fp);
  }
  manifest.line("bake", {{"checkpoint", fp_hex(model_fp)},
                         {"vocab", fp_hex(vocab_fp)},
                         {"S", std::to_string(bm.S)},
                         {"d", std::to_string(bm.d)},
                         {"dtype", dtype_name(bm.dtype)},
                         {"batch_size", std::to_string(bm.batch_size)},
                         {"table", fp_hex(fingerprint_file(cfg.required("table")))},
                         {"wall_ms", timer.ms()}});
  return 0;
}

int run_parity(const Config& cfg, Manifest& manifest) {
  Timer timer;
  auto data = read_file(cfg.required("checkpoint"));
  ModelConfig mc = peek_checkpoint_config(data);
  auto vocab = load_fgram_vocab(cfg.required("vocab"));
  auto store =
      EmbeddingStore::open(cfg.required("table"), cfg.required("vocab"), backend_from(cfg));
  std::uint64_t sample = cfg.u64("parity_sample", 0);  // 0 = full sweep

  ParityReport report;
  if (mc.precision == Dtype::f64) {
    auto model = decode_checkpoint<double>(data);
    report = verify_parity(model, vocab, store, sample, cfg.u64("seed", 0));
  } else {
    auto model = decode_checkpoint<float>(data);
    report = verify_parity(model, vocab, store, sample, cfg.u64("seed", 0));
  }
  bool ok = report.within(store.dtype());
  char diff_buf[48];
  std::snprintf(diff_buf, sizeof(diff_buf), "%.9g", report.max_abs_diff);
  std::cout << "parity max_abs_diff=" << diff_buf << " vectors=" << report.vectors_checked
            << " dtype=" << dtype_name(store.dtype()) << (ok ? " OK" : " FAIL") << "\n";
  manifest.line("parity", {{"table", fp_hex(fingerprint_file(cfg.required("table")))},
                           {"max_abs_diff", diff_buf},
                           {"result", ok ? "ok" : "fail"},
                           {"wall_ms", timer.ms()}});
  return ok ? 0 : 1;
}

template <typename Scalar>
std::vector<EvalReport> eval_reports(const Config& cfg, const SconeModel<Scalar>& model,
                                     EmbedMode mode, const EmbeddingStore* store) {
  Vocabulary vocab_tokens(model.config.vocab_size);
  std::optional<FGramIndex> index;
  if (mode == EmbedMode::live) index.emplace(load_fgram_vocab(cfg.required("vocab")));

  std::vector<EvalReport> reports;
  for (const std::string& path : split_csv(cfg.required("eval_corpus"))) {
    auto corpus = load_corpus(path, corpus_format(cfg), vocab_tokens);
    std::vector<MatchTags> tags;
    tags.reserve(corpus.sequences.size());
    for (const auto& seq : corpus.sequences) {
      if (mode == EmbedMode::live) {
        tags.push_back(tag_sequence(*index, seq));
      } else if (mode == EmbedMode::store) {
        tags.push_back(tag_sequence(*store, seq));
      } else {
        MatchTags t;
        t.lengths.assign(seq.size(), 1);
        t.ids.assign(seq.size(), kNoFGram);
        tags.push_back(std::move(t));
      }
    }
    reports.push_back(perplexity(model, mode, corpus, tags, store,
                                 std::filesystem::path(path).filename().string()));
  }
  return reports;
}

int run_eval(const Config& cfg, Manifest& manifest) {
  Timer timer;
  auto data = read_file(cfg.required("checkpoint"));
  ModelConfig mc = peek_checkpoint_config(data);

  std::string mode_name = cfg.str("mode", "baseline");
  EmbedMode mode;
  if (mode_name == "baseline") mode = EmbedMode::baseline;
  else if (mode_name == "live") mode = EmbedMode::live;
  else if (mode_name == "store") mode = EmbedMode::store;
  else throw ValidationError("eval: mode must be baseline, live, or store");

  std::optional<EmbeddingStore> store;
  if (mode == EmbedMode::store)
    store.emplace(EmbeddingStore::open(cfg.required("table"), cfg.required("vocab"),
                                       backend_from(cfg)));

  std::vector<EvalReport> reports, live_reports;
  if (mc.precision == Dtype::f64) {
    auto model = decode_checkpoint<double>(data);
    reports = eval_reports(cfg, model, mode, store ? &*store : nullptr);
    if (mode == EmbedMode::store && cfg.flag("check_store_parity", false))
      live_reports = eval_reports(cfg, model, EmbedMode::live, nullptr);
  } else {
    auto model = decode_checkpoint<float>(data);
    reports = eval_reports(cfg, model, mode, store ? &*store : nullptr);
    if (mode == EmbedMode::store && cfg.flag("check_store_parity", false))
      live_reports = eval_reports(cfg, model, EmbedMode::live, nullptr);
  }

  for (const auto& r : reports) std::cout << eval_report_line(r) << "\n";
  if (reports.size() > 1) {
    auto s = summarize(reports);
    std::cout << "average over corpora: ppl=" << s.corpus_average_perplexity
              << "  token-weighted: ppl=" << s.token_average_perplexity << "\n";
  }

  bool checks_ok = true;
  if (!live_reports.empty()) {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (reports[i].mean_cross_entropy != live_reports[i].mean_cross_entropy) {
        checks_ok = false;
        std::cerr << "store/live parity check FAILED on " << reports[i].corpus << "\n";
      }
    }
    if (checks_ok) std::cout << "store/live parity check OK\n";
  }

  char ppl_buf[32];
  std::snprintf(ppl_buf, sizeof(ppl_buf), "%.6f",
                reports.empty() ? 0.0 : reports.front().perplexity);
  manifest.line("eval", {{"checkpoint", fp_hex(fnv1a64(data))},
                         {"mode", mode_name},
                         {"perplexity", ppl_buf},
                         {"wall_ms", timer.ms()}});
  return checks_ok ? 0 : 1;
}

int run_bench(const Config& cfg, Manifest& manifest) {
  Timer timer;
  auto store =
      EmbeddingStore::open(cfg.required("table"), cfg.required("vocab"), backend_from(cfg));
  std::vector<std::uint32_t> batches;
  for (const auto& b : split_csv(cfg.str("batch_sizes", "1,16")))
    batches.push_back(static_cast<std::uint32_t>(std::stoul(b)));
  std::uint64_t trials = cfg.u64("trials", 1000);
  bool cold = cfg.flag("cold", false);

  auto stats = measure_latency(store, batches, trials, cold, cfg.u64("seed", 12345));
  for (const auto& s : stats) std::cout << latency_report_line(store, s) << "\n";
  manifest.line("bench", {{"table", fp_hex(fingerprint_file(cfg.required("table")))},
                          {"backend", backend_name(store.backend())},
                          {"trials", std::to_string(trials)},
                          {"wall_ms", timer.ms()}});
  return 0;
}

int run_gradcheck(const Config& cfg, Manifest& manifest) {
  Timer timer;
  ModelConfig mc = model_config(cfg);
  mc.precision = Dtype::f64;
  double tolerance = cfg.f64("gradcheck_tolerance", 1e-4);
  auto report = grad_check(mc, tolerance, cfg.u64("seed", 17), cfg.u64("gradcheck_fgrams", 4));
  for (const auto& g : report.groups) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "group=%-24s max_rel_err=%.3e analytic=%.6g numeric=%.6g",
                  g.name.c_str(), g.max_rel_err, g.worst_analytic, g.worst_numeric);
    std::cout << buf << "\n";
  }
  char err_buf[32];
  std::snprintf(err_buf, sizeof(err_buf), "%.3e", report.max_rel_err);
  std::cout << "gradcheck parameters=" << report.parameters << " max_rel_err=" << err_buf
            << " tolerance=" << tolerance << (report.passed ? " OK" : " FAIL") << "\n";
  manifest.line("gradcheck", {{"parameters", std::to_string(report.parameters)},
                              {"max_rel_err", err_buf},
                              {"result", report.passed ? "ok" : "fail"},
                              {"wall_ms", timer.ms()}});
  return report.passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Demo: synthetic corpus through every stage, then the invariant checks.

int run_demo(Config cfg, Manifest& manifest) {
  Timer timer;
  std::uint64_t seed = cfg.u64("seed", 1);
  std::filesystem::path dir = cfg.str("run_dir", "demo_run");
  std::filesystem::create_directories(dir);

  std::cout << "[demo] generating synthetic 2nd-order Markov corpus (seed " << seed << ")\n";
  MarkovConfig mc;
  mc.vocab_size = 256;
  mc.support = 4;
  mc.structure_seed = 7;
  MarkovSource source(mc);
  std::uint64_t train_tokens = cfg.u64("demo_train_tokens", 400000);
  std::uint64_t eval_tokens = cfg.u64("demo_eval_tokens", 40000);
  auto train_corpus = source.sample(seed, train_tokens, 128);
  auto eval_corpus = source.sample(seed + 1000003, eval_tokens, 128);
  write_corpus(dir / "train.scnc", train_corpus, CorpusFormat::binary_u32);
  write_corpus(dir / "eval.scnc", eval_corpus, CorpusFormat::binary_u32);

  cfg.set("corpus", (dir / "train.scnc").string());
  cfg.set("eval_corpus", (dir / "eval.scnc").string());
  cfg.set("vocab", (dir / "fgrams.scnv").string());
  cfg.set("tags", (dir / "train.scnt").string());
  cfg.set("checkpoint", (dir / "scone.scnm").string());
  cfg.set("table", (dir / "fgrams.scne").string());
  if (!cfg.has("n_max")) cfg.set("n_max", "3");
  if (!cfg.has("num_fgrams")) cfg.set("num_fgrams", "1024");
  if (!cfg.has("min_count")) cfg.set("min_count", "5");
  if (!cfg.has("steps")) cfg.set("steps", "220");
  if (!cfg.has("batch_size")) cfg.set("batch_size", "16");
  if (!cfg.has("d_model")) cfg.set("d_model", "64");
  if (!cfg.has("ffw_size")) cfg.set("ffw_size", "256");
  if (!cfg.has("peak_lr")) cfg.set("peak_lr", "1e-3");

  run_discover(cfg, manifest);
  run_tag(cfg, manifest);
  std::cout << "[demo] training SCONE model\n";
  run_train(cfg, manifest);
  run_bake(cfg, manifest);

  // Baseline: same main configuration, no f-gram stack, all-token tags.
  std::cout << "[demo] training baseline model\n";
  Config base_cfg = cfg;
  base_cfg.set("fgram_n_layers", "0");
  base_cfg.set("checkpoint", (dir / "baseline.scnm").string());
  {
    // Baseline ignores matches; tag against an empty vocabulary.
    FGramVocabulary empty;
    empty.n_max = static_cast<std::uint32_t>(cfg.u64("n_max", 3));
    write_fgram_vocab(dir / "empty.scnv", empty);
    base_cfg.set("vocab", (dir / "empty.scnv").string());
    base_cfg.set("tags", (dir / "train_baseline.scnt").string());
    run_tag(base_cfg, manifest);
  }
  run_train(base_cfg, manifest);

  // Held-out perplexity: baseline vs SCONE live vs SCONE from the store.
  auto scone_model = load_checkpoint<float>(cfg.required("checkpoint"));
  auto baseline_model = load_checkpoint<float>(base_cfg.required("checkpoint"));
  auto vocab = load_fgram_vocab(cfg.required("vocab"));
  FGramIndex index(vocab);
  auto store = EmbeddingStore::open(cfg.required("table"), cfg.required("vocab"),
                                    backend_from(cfg));

  std::vector<MatchTags> eval_tags, ones;
  for (const auto& seq : eval_corpus.sequences) {
    eval_tags.push_back(tag_sequence(index, seq));
    MatchTags t;
    t.lengths.assign(seq.size(), 1);
    t.ids.assign(seq.size(), kNoFGram);
    ones.push_back(std::move(t));
  }
  auto base_report = perplexity(baseline_model, EmbedMode::baseline, eval_corpus, ones,
                                static_cast<const NoStore*>(nullptr), "eval");
  auto live_report = perplexity(scone_model, EmbedMode::live, eval_corpus, eval_tags,
                                static_cast<const NoStore*>(nullptr), "eval");
  auto store_report =
      perplexity(scone_model, EmbedMode::store, eval_corpus, eval_tags, &store, "eval");

  std::cout << "[demo] baseline    " << eval_report_line(base_report) << "\n";
  std::cout << "[demo] scone-live  " << eval_report_line(live_report) << "\n";
  std::cout << "[demo] scone-store " << eval_report_line(store_report) << "\n";
  std::cout << "[demo] avg match length on eval: " << avg_match_length(eval_tags) << "\n";

  // Invariant checks.
  bool ok = true;
  auto check = [&](const std::string& name, bool pass) {
    std::cout << "[demo] check " << name << ": " << (pass ? "OK" : "FAIL") << "\n";
    ok = ok && pass;
  };
  auto parity = verify_parity(scone_model, vocab, store);
  check("bake/store parity (max_abs_diff==0)", parity.max_abs_diff == 0.0);
  check("store/live perplexity identical",
        store_report.mean_cross_entropy == live_report.mean_cross_entropy);
  auto flops_base = estimate_flops(scone_model.config, 128, FlopsMode::baseline);
  auto flops_store = estimate_flops(scone_model.config, 128, FlopsMode::scone_store);
  check("FLOPS invariance (store == baseline)", flops_base.total() == flops_store.total());
  {
    // Reduction: SCONE weights with every tag = 1 match a plain model that
    // shares them, bit for bit.
    ModelConfig plain_cfg = scone_model.config;
    plain_cfg.fgram_n_layers = 0;
    auto plain = zero_model<float>(plain_cfg);
    plain.token_embedding = scone_model.token_embedding;
    plain.main_stack = scone_model.main_stack;
    plain.head_w = scone_model.head_w;
    plain.head_b = scone_model.head_b;
    auto a = perplexity(scone_model, EmbedMode::baseline, eval_corpus, ones,
                        static_cast<const NoStore*>(nullptr), "eval");
    auto b = perplexity(plain, EmbedMode::baseline, eval_corpus, ones,
                        static_cast<const NoStore*>(nullptr), "eval");
    check("baseline reduction (S=0 bitwise)", a.mean_cross_entropy == b.mean_cross_entropy);
  }

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "[demo] summary: baseline_ppl=%.4f scone_ppl=%.4f (%s) checks=%s wall_ms=%s",
                base_report.perplexity, live_report.perplexity,
                live_report.perplexity < base_report.perplexity ? "scone better"
                                                                : "baseline better",
                ok ? "all-ok" : "FAILED", timer.ms().c_str());
  std::cout << buf << "\n";
  manifest.line("demo", {{"seed", std::to_string(seed)},
                         {"baseline_ppl", std::to_string(base_report.perplexity)},
                         {"scone_ppl", std::to_string(live_report.perplexity)},
                         {"checks", ok ? "ok" : "fail"},
                         {"wall_ms", timer.ms()}});
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCONE: f-gram discovery, training, baking, and serving"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  app.add_option("--config", config_path, "flat key=value configuration file");

  // Overrides (applied on top of the config file).
  std::optional<std::uint64_t> seed, num_fgrams, min_count, trials;
  std::optional<std::uint32_t> n_max;
  std::optional<std::string> backend, batch_sizes, store_dtype;
  bool cold = false;
  app.add_option("--seed", seed, "run seed");
  app.add_option("--n-max", n_max, "maximum f-gram length");
  app.add_option("--num-fgrams", num_fgrams, "f-gram vocabulary size S");
  app.add_option("--min-count", min_count, "discovery frequency threshold");
  app.add_option("--backend", backend, "store backend: memory|disk");
  app.add_option("--batch-sizes", batch_sizes, "bench batch sizes, comma separated");
  app.add_option("--trials", trials, "bench trials per batch size");
  app.add_flag("--cold", cold, "drop page caches before each bench trial");
  app.add_option("--store-dtype", store_dtype, "baked table dtype: fp32|fp16");

  const std::vector<std::string> stages = {"discover", "tag",    "train",     "bake", "eval",
                                           "bench",    "parity", "gradcheck", "demo"};
  for (const auto& s : stages) app.add_subcommand(s);

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg;
    if (!config_path.empty()) cfg = Config::load(config_path);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (n_max) cfg.set("n_max", std::to_string(*n_max));
    if (num_fgrams) cfg.set("num_fgrams", std::to_string(*num_fgrams));
    if (min_count) cfg.set("min_count", std::to_string(*min_count));
    if (backend) cfg.set("backend", *backend);
    if (batch_sizes) cfg.set("batch_sizes", *batch_sizes);
    if (trials) cfg.set("trials", std::to_string(*trials));
    if (cold) cfg.set("cold", "1");
    if (store_dtype) cfg.set("store_dtype", *store_dtype);

    Manifest manifest(cfg.str("manifest", "manifest.txt"));
    std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "discover") return run_discover(cfg, manifest);
    if (stage == "tag") return run_tag(cfg, manifest);
    if (stage == "train") return run_train(cfg, manifest);
    if (stage == "bake") return run_bake(cfg, manifest);
    if (stage == "eval") return run_eval(cfg, manifest);
    if (stage == "bench") return run_bench(cfg, manifest);
    if (stage == "parity") return run_parity(cfg, manifest);
    if (stage == "gradcheck") return run_gradcheck(cfg, manifest);
    if (stage == "demo") return run_demo(cfg, manifest);
    std::cerr << "unknown stage " << stage << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
