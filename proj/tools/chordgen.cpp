// chordgen command-line driver: data preparation, training, evaluation,
// reporting, sampling and the HTTP service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "chordgen/replication.hpp"
#include "chordgen/sampler.hpp"
#include "chordgen/service.hpp"

namespace fs = std::filesystem;
using namespace chordgen;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
};

void log_line(const std::string& line) { std::cerr << line << std::endl; }

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
  }
}

json config_or_empty(const Globals& g) { return g.config.empty() ? json::object() : load_json(g.config); }

fs::path config_dir(const Globals& g) { return g.config.empty() ? fs::path{} : fs::path(g.config).parent_path(); }

/// Relative paths in a config file are relative to that file.
fs::path resolve(const Globals& g, const std::string& p) {
  const fs::path path(p);
  return path.is_relative() && !g.config.empty() ? config_dir(g) / path : path;
}

void write_file(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  out << body;
}

std::vector<SongRecord> songs_in(const std::vector<SongRecord>& songs, std::optional<Genre> genre, Split split) {
  std::vector<SongRecord> out;
  for (const auto& s : songs) {
    if (s.split == split && (!genre || s.genre == *genre)) out.push_back(s);
  }
  return out;
}

/// `<split>` or `<genre>_<split>`, e.g. `val`, `jazz_test`.
std::vector<SongRecord> select_split(const std::vector<SongRecord>& songs, const std::string& name) {
  const auto us = name.find('_');
  if (us == std::string::npos) return songs_in(songs, std::nullopt, parse_split(name));
  return songs_in(songs, parse_genre(name.substr(0, us)), parse_split(name.substr(us + 1)));
}

ChordTransformer<double> load_model(const fs::path& path) {
  const auto file = read_checkpoint(path);
  if (file.config.value("vocab_version", std::string()) != Vocabulary::build().version()) {
    throw Error(ErrorCode::palette_mismatch, path.string() + " was trained with another vocabulary");
  }
  return ChordTransformer<double>::from_checkpoint(file);
}

// ---------------------------------------------------------------------------
// Data

int cmd_ingest(const std::vector<std::string>& inputs, const std::string& dialect, const std::vector<std::string>& priority,
               const std::string& output) {
  std::vector<SongRecord> songs;
  std::size_t dropped = 0;
  for (const auto& path : inputs) {
    for (auto& s : read_corpus_jsonl(path, parse_dialect(dialect))) {
      if (s.source.empty()) s.source = fs::path(path).stem().string();
      if (s.chord_count() == 0) {
        ++dropped;
        continue;
      }
      songs.push_back(std::move(s));
    }
  }
  const std::size_t before = songs.size();
  songs = dedup(songs, priority);
  if (songs.empty()) throw Error(ErrorCode::empty_corpus, "no songs with chords in the inputs");
  write_corpus_jsonl(output, songs);
  std::cout << "ingested " << songs.size() << " songs (" << dropped << " without chords, " << before - songs.size()
            << " duplicates dropped)\n";
  return 0;
}

int cmd_synth_gen(const Globals& g, const std::string& spec_path, std::size_t n, const std::string& prefix,
                  const std::string& output) {
  const auto spec = GenreSpec::load(spec_path);
  const auto songs = generate_synthetic_genre(spec, n, g.seed.value_or(1), prefix.empty() ? spec.name : prefix);
  write_corpus_jsonl(output, songs);
  std::cout << "generated " << songs.size() << " " << to_string(spec.genre) << " songs from " << spec.name << "\n";
  return 0;
}

int cmd_split(const Globals& g, const std::string& input, const std::string& output) {
  auto songs = split_songs(read_corpus_jsonl(input), g.seed.value_or(42));
  write_corpus_jsonl(output, songs);
  std::size_t counts[4] = {};
  for (const auto& s : songs) ++counts[static_cast<int>(s.split)];
  std::cout << "train " << counts[1] << ", val " << counts[2] << ", test " << counts[3] << "\n";
  return 0;
}

int cmd_tokenize(const std::string& input, const std::string& output, bool augment) {
  const auto vocab = Vocabulary::build();
  const auto songs = read_corpus_jsonl(input);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + output);
  EncodeStats stats;
  std::size_t written = 0;
  for (const auto& s : songs) {
    std::vector<TokenSequence> seqs = {encode(s, vocab, &stats)};
    if (augment) seqs = augment_twelve_keys(seqs, vocab);
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      json line = {{"id", augment ? s.id + "+" + std::to_string(k) : s.id},
                   {"genre", to_string(s.genre)},
                   {"split", to_string(s.split)},
                   {"ids", seqs[k].ids}};
      out << line.dump() << '\n';
      ++written;
    }
  }
  std::cout << "wrote " << written << " sequences, vocabulary " << vocab.version() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Training

/// Config: {"corpus", "out", "model": {...}, "train": {...}}. The model trains
/// on pop train songs and is scored on pop val, pop test and jazz test.
int cmd_pretrain(const Globals& g, std::string corpus, std::string out) {
  const json cfg = config_or_empty(g);
  if (corpus.empty() && cfg.contains("corpus")) corpus = resolve(g, cfg["corpus"].get<std::string>()).string();
  if (out.empty() && cfg.contains("out")) out = resolve(g, cfg["out"].get<std::string>()).string();
  if (corpus.empty() || out.empty()) throw Error(ErrorCode::invalid_argument, "pretrain needs a corpus and an output dir");
  const auto model_cfg = ModelConfig::from_json(cfg.value("model", json::object()));
  json train_json = cfg.value("train", json::object());
  train_json["phase"] = "pretrain";
  auto train_cfg = TrainConfig::from_json(train_json);
  if (g.seed) train_cfg.seed = *g.seed;

  const auto vocab = Vocabulary::build();
  const auto songs = read_corpus_jsonl(corpus);
  std::vector<EvalSet> sets = {{"val", encode_all(songs_in(songs, Genre::pop, Split::val), vocab, false)},
                               {"pop_test", encode_all(songs_in(songs, Genre::pop, Split::test), vocab, false)}};
  const auto jazz_test = songs_in(songs, Genre::jazz, Split::test);
  if (!jazz_test.empty()) sets.push_back({"jazz_test", encode_all(jazz_test, vocab, false)});
  RunOptions ro;
  ro.dir = out;
  ro.log = log_line;
  const auto result = run_pretrain(encode_all(songs_in(songs, Genre::pop, Split::train), vocab, false), sets, model_cfg,
                                   train_cfg, ro);
  std::cout << "best epoch " << result.records[result.best_index].epoch << ", checkpoint " << (fs::path(out) / "best.bin").string()
            << "\n";
  return 0;
}

/// Two config forms. With "synthetic" the desk-scale experiment runs once per
/// seed into <out>/seed_<n>/. Otherwise "base" and "corpus" name a pretrained
/// checkpoint and a split corpus, and the runs go to <out>/runs/.
int cmd_sweep(const Globals& g, const std::string& genre_dir) {
  if (g.config.empty()) throw Error(ErrorCode::invalid_argument, "sweep needs --config");
  const json cfg = load_json(g.config);
  const fs::path out = resolve(g, cfg.value("out", std::string("sweep")));

  if (cfg.contains("synthetic")) {
    auto rc = ReplicationConfig::from_json(cfg["synthetic"], genre_dir, config_dir(g));
    if (g.seed) rc.seeds = {*g.seed};
    fs::create_directories(out);
    write_file(out / "replication.json", rc.to_json().dump(2) + "\n");
    std::vector<SeedOutcome> outcomes;
    for (auto seed : rc.seeds) {
      const auto dir = out / ("seed_" + std::to_string(seed));
      outcomes.push_back(run_replication_seed(rc, seed, dir, [&](const std::string& l) {
        log_line("seed " + std::to_string(seed) + " " + l);
      }));
      std::cout << outcomes.back().report.markdown << "\n";
    }
    write_file(out / "summary.md", format_mean_deltas(outcomes));
    std::cout << format_mean_deltas(outcomes);
    return 0;
  }

  if (!cfg.contains("base") || !cfg.contains("corpus")) {
    throw Error(ErrorCode::invalid_argument, "sweep config needs `synthetic`, or `base` and `corpus`");
  }
  const auto vocab = Vocabulary::build();
  const auto base = load_model(resolve(g, cfg["base"].get<std::string>()));
  const auto songs = read_corpus_jsonl(resolve(g, cfg["corpus"].get<std::string>()));
  SweepData data;
  data.jazz_train = songs_in(songs, Genre::jazz, Split::train);
  data.pop_train = songs_in(songs, Genre::pop, Split::train);
  data.jazz_val = songs_in(songs, Genre::jazz, Split::val);
  data.pop_val = songs_in(songs, Genre::pop, Split::val);
  data.pop_test = songs_in(songs, Genre::pop, Split::test);
  data.jazz_test = songs_in(songs, Genre::jazz, Split::test);

  json train_json = cfg.value("train", json::object());
  train_json["phase"] = "finetune";
  auto train_cfg = TrainConfig::from_json(train_json);
  if (g.seed) train_cfg.seed = *g.seed;
  const std::size_t jazz = data.jazz_train.size();
  std::vector<MixConfig> mixes;
  if (cfg.contains("pop_mixes")) {
    for (std::size_t m : cfg["pop_mixes"].get<std::vector<std::size_t>>()) {
      mixes.push_back({mix_run_name(m, jazz), m, jazz, train_cfg.seed});
    }
  } else {
    mixes = standard_mix_sweep(jazz, train_cfg.seed);
  }

  auto base_copy = base;
  const std::vector<EvalSet> tests = {{"pop_test", encode_all(data.pop_test, vocab, false)},
                                      {"jazz_test", encode_all(data.jazz_test, vocab, false)}};
  const auto base_rows = evaluate_sets(base_copy, tests, 0);
  EpochRecord base_rec;
  base_rec.rows = base_rows;
  const Baseline baseline{base_rec.row(kSourceTest), base_rec.row(kTargetTest)};
  fs::create_directories(out);
  write_eval_csv(base_rows, out / "baseline.csv");

  SweepOptions so;
  so.dir = out / "runs";
  so.augment = cfg.value("augment", true);
  so.slack = cfg.value("slack", 3.0);
  so.log = log_line;
  std::vector<RunSummary> runs;
  for (auto& r : run_finetune_sweep(base, data, mixes, train_cfg, baseline.source.top1, so)) {
    runs.push_back({r.mix.name, r.mix.pop_mix, std::move(r.result.records)});
  }
  const auto rep = report_sweep(runs, baseline, so.slack);
  write_report(rep, out / "report");
  std::cout << rep.markdown;
  return 0;
}

// ---------------------------------------------------------------------------
// Evaluation and reporting

int cmd_eval(const std::string& ckpt, const std::string& corpus, const std::string& split, std::string csv,
             std::optional<int> epoch) {
  const auto file = read_checkpoint(ckpt);
  auto model = load_model(ckpt);
  const auto vocab = Vocabulary::build();
  const auto songs = select_split(read_corpus_jsonl(corpus), split);
  if (!epoch) epoch = file.config.value("provenance", json::object()).value("epoch", 0);
  const auto res = evaluate_split(model, encode_all(songs, vocab, false), split, *epoch);
  if (csv.empty()) csv = (fs::path(ckpt).parent_path() / "eval_results.csv").string();
  append_eval_csv({res.all, res.chord}, csv);
  std::cout << kEvalCsvHeader << format_eval_row(res.chord);
  return 0;
}

/// Rebuilds the report of a sweep directory from baseline.csv and
/// runs/<name>/{config.json,eval_results.csv}.
int cmd_report(const std::string& dir, std::string out, double slack) {
  const fs::path root(dir);
  EpochRecord base;
  base.rows = read_eval_csv(root / "baseline.csv");
  const Baseline baseline{base.row(kSourceTest), base.row(kTargetTest)};
  std::vector<std::pair<std::size_t, RunSummary>> runs;
  for (const auto& entry : fs::directory_iterator(root / "runs")) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "eval_results.csv")) continue;
    const auto cfg = load_json(entry.path() / "config.json");
    const auto mix = cfg.value("mix", json::object());
    RunSummary r{entry.path().filename().string(), mix.value("pop_mix", std::size_t{0}),
                 records_from_rows(read_eval_csv(entry.path() / "eval_results.csv"))};
    runs.emplace_back(r.pop_mix, std::move(r));
  }
  if (runs.empty()) throw Error(ErrorCode::empty_records, "no runs under " + (root / "runs").string());
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<RunSummary> ordered;
  for (auto& [m, r] : runs) ordered.push_back(std::move(r));
  const auto rep = report_sweep(ordered, baseline, slack);
  write_report(rep, out.empty() ? root / "report" : fs::path(out));
  std::cout << rep.markdown;
  return 0;
}

// ---------------------------------------------------------------------------
// Sampling and serving

std::vector<std::vector<std::string>> parse_bar_text(const std::string& text) {
  std::vector<std::vector<std::string>> bars(1);
  std::string word;
  const auto flush = [&] {
    if (!word.empty()) bars.back().push_back(word);
    word.clear();
  };
  for (char c : text) {
    if (c == '|') {
      flush();
      bars.emplace_back();
    } else if (c == ' ' || c == '\t') {
      flush();
    } else {
      word += c;
    }
  }
  flush();
  std::erase_if(bars, [](const auto& b) { return b.empty(); });
  return bars;
}

int cmd_sample(const Globals& g, const std::string& ckpt, const std::string& prompt_name, const std::string& chords,
               const std::string& genre, const std::string& key, SampleParams params) {
  auto model = load_model(ckpt);
  const auto vocab = Vocabulary::build();
  params.seed = g.seed.value_or(0);
  std::vector<PromptSpec> prompts;
  if (!chords.empty()) {
    prompts.push_back(make_prompt("custom", parse_genre(genre), key, parse_bar_text(chords)));
  } else {
    for (const auto& p : builtin_prompts()) {
      if (prompt_name == "all" || p.name == prompt_name) prompts.push_back(p);
    }
    if (prompts.empty()) throw Error(ErrorCode::invalid_argument, "unknown prompt `" + prompt_name + "`");
  }
  json out = json::array();
  for (const auto& p : prompts) {
    out.push_back(continuation_to_json(p, params, sample_continuation(model, p.prefix(vocab), params), vocab));
  }
  std::cout << (out.size() == 1 ? out[0] : out).dump(2) << "\n";
  return 0;
}

int cmd_serve(const Globals& g, std::string registry, const std::string& host, int port) {
  const json cfg = config_or_empty(g);
  if (registry.empty() && cfg.contains("registry")) registry = resolve(g, cfg["registry"].get<std::string>()).string();
  if (registry.empty()) throw Error(ErrorCode::invalid_argument, "serve needs --registry");
  InferenceService service(StyleRegistry::load(registry), g.seed.value_or(0x5eed));
  httplib::Server server;
  mount(server, service);
  std::cerr << "serving " << service.registry().entries().size() << " styles on http://" << host << ":" << port << std::endl;
  if (!server.listen(host, port)) throw Error(ErrorCode::io_failure, "cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chordgen: chord-progression transformer pipeline"};
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed for the command");
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.require_subcommand(1);

  std::vector<std::string> ingest_inputs, ingest_priority;
  std::string dialect = "guitar", output;
  auto* ingest = app.add_subcommand("ingest", "Read JSONL corpora, drop songs without chords, dedup");
  ingest->add_option("--input", ingest_inputs, "Corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--dialect", dialect, "Chord dialect: guitar, ireal, interval, classed");
  ingest->add_option("--source-priority", ingest_priority, "Sources in dedup priority order");
  ingest->add_option("--output", output, "Output JSONL")->required();

  std::string spec_path, prefix;
  std::size_t n_songs = 100;
  auto* synth = app.add_subcommand("synth-gen", "Generate songs from a genre Markov spec");
  synth->add_option("--spec", spec_path, "GenreSpec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--n", n_songs, "Number of songs");
  synth->add_option("--prefix", prefix, "Song id prefix");
  synth->add_option("--output", output, "Output JSONL")->required();

  std::string input;
  auto* split = app.add_subcommand("split", "Assign 80/10/10 splits per source (seed 42 unless --seed)");
  split->add_option("--input", input, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  split->add_option("--output", output, "Output JSONL")->required();

  bool augment = false;
  auto* tokenize = app.add_subcommand("tokenize", "Encode a corpus to token ids");
  tokenize->add_option("--input", input, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  tokenize->add_option("--output", output, "Output JSONL of id sequences")->required();
  tokenize->add_flag("--augment", augment, "Emit all 12 transpositions");

  std::string corpus, out_dir;
  auto* pretrain = app.add_subcommand("pretrain", "Train on pop songs from scratch");
  pretrain->add_option("--corpus", corpus, "Split corpus JSONL");
  pretrain->add_option("--out", out_dir, "Run directory");

  std::string genre_dir = "data/genres";
  auto* sweep = app.add_subcommand("sweep", "Fine-tune one run per rehearsal mix (needs --config)");
  sweep->add_option("--genres", genre_dir, "Directory with popish.json and jazzish.json");

  std::string ckpt, split_name = "jazz_test", csv;
  std::optional<int> epoch;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on one split and append to a CSV");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", corpus, "Split corpus JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split_name, "Split name, e.g. val or jazz_test");
  eval->add_option("--csv", csv, "CSV to append (default: eval_results.csv next to the checkpoint)");
  eval->add_option("--epoch", epoch, "Epoch column value");

  std::string report_dir;
  double slack = 3.0;
  auto* report = app.add_subcommand("report", "Tables and figure data for a sweep directory");
  report->add_option("--dir", report_dir, "Sweep directory with baseline.csv and runs/")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", out_dir, "Output directory (default: <dir>/report)");
  report->add_option("--slack", slack, "Source top-1 floor below baseline");

  std::string prompt_name = "all", chords, genre = "jazz", key = "C";
  SampleParams params;
  auto* sample = app.add_subcommand("sample", "Continue the built-in or a custom prompt");
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--prompt", prompt_name, "Built-in prompt name or `all`");
  sample->add_option("--chords", chords, "Custom prompt, e.g. \"Dm7 G7 | Cmaj7\"");
  sample->add_option("--genre", genre, "Genre of a custom prompt");
  sample->add_option("--key", key, "Key of a custom prompt");
  sample->add_option("--top-p", params.top_p, "Nucleus mass");
  sample->add_option("--temperature", params.temperature, "Softmax temperature");
  sample->add_option("--max-new", params.max_new_tokens, "Maximum generated tokens");

  std::string registry, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP service over a style registry");
  serve->add_option("--registry", registry, "Registry JSON");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_inputs, dialect, ingest_priority, output);
    if (*synth) return cmd_synth_gen(g, spec_path, n_songs, prefix, output);
    if (*split) return cmd_split(g, input, output);
    if (*tokenize) return cmd_tokenize(input, output, augment);
    if (*pretrain) return cmd_pretrain(g, corpus, out_dir);
    if (*sweep) return cmd_sweep(g, genre_dir);
    if (*eval) return cmd_eval(ckpt, corpus, split_name, csv, epoch);
    if (*report) return cmd_report(report_dir, out_dir, slack);
    if (*sample) return cmd_sample(g, ckpt, prompt_name, chords, genre, key, params);
    if (*serve) return cmd_serve(g, registry, host, port);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
