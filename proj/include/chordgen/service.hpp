#pragma once

// Style registry and the HTTP inference endpoints.

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/checkpoint.hpp"
#include "chordgen/model.hpp"
#include "chordgen/sampler.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen's
// parameter names.
#include <httplib.h>

namespace chordgen {

struct StyleEntry {
  std::string id;
  std::string name;
  std::string description;
  std::string provenance;
  std::filesystem::path checkpoint;
  std::shared_ptr<ChordTransformer<double>> model;
};

/// Styles in file order. Checkpoint paths are relative to the registry file.
class StyleRegistry {
 public:
  StyleRegistry() = default;

  static StyleRegistry from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    StyleRegistry reg;
    const auto version = Vocabulary::build().version();
    try {
      for (const auto& e : j.at("styles")) {
        StyleEntry s;
        s.id = e.at("id").get<std::string>();
        s.name = e.value("name", s.id);
        s.description = e.value("description", std::string());
        s.provenance = e.value("provenance", std::string());
        s.checkpoint = e.at("checkpoint").get<std::string>();
        if (s.checkpoint.is_relative() && !base_dir.empty()) s.checkpoint = base_dir / s.checkpoint;
        if (reg.find(s.id)) throw Error(ErrorCode::invalid_argument, "duplicate style id " + s.id);
        const auto file = read_checkpoint(s.checkpoint);
        if (file.config.value("vocab_version", std::string()) != version) {
          throw Error(ErrorCode::palette_mismatch, s.checkpoint.string() + " was trained with another vocabulary");
        }
        s.model = std::make_shared<ChordTransformer<double>>(ChordTransformer<double>::from_checkpoint(file));
        reg.entries_.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format_error, std::string("bad registry: ") + e.what());
    }
    return reg;
  }

  static StyleRegistry load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open registry " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  void add(StyleEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<StyleEntry>& entries() const { return entries_; }

  const StyleEntry* find(const std::string& id) const {
    for (const auto& e : entries_) {
      if (e.id == id) return &e;
    }
    return nullptr;
  }

 private:
  std::vector<StyleEntry> entries_;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

inline HttpReply error_reply(int status, const std::string& code, const std::string& message,
                             nlohmann::json extra = nlohmann::json::object()) {
  extra["code"] = code;
  extra["message"] = message;
  return {status, {{"error", extra}}};
}

/// Request handlers without transport. Safe to call concurrently: models are
/// only read, and each request samples from its own generator.
class InferenceService {
 public:
  explicit InferenceService(StyleRegistry registry, std::uint64_t seed_stream = 0x5eed)
      : registry_(std::move(registry)), seeds_(seed_stream) {}

  const StyleRegistry& registry() const { return registry_; }

  HttpReply health() const { return {200, {{"status", "ok"}, {"styles", registry_.entries().size()}}}; }

  HttpReply models() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : registry_.entries()) {
      list.push_back({{"style_id", e.id}, {"name", e.name}, {"description", e.description}, {"provenance", e.provenance}});
    }
    return {200, {{"models", list}}};
  }

  HttpReply continue_progression(const std::string& raw_body) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(raw_body);
    } catch (const nlohmann::json::exception&) {
      return error_reply(400, "malformed_body", "request body is not JSON");
    }
    if (!req.is_object() || !req.contains("style_id") || !req["style_id"].is_string() || !req.contains("chords") ||
        !req["chords"].is_array()) {
      return error_reply(400, "malformed_body", "expected {style_id: string, chords: [[chord, ...], ...]}");
    }
    const std::string style_id = req["style_id"].get<std::string>();
    const StyleEntry* style = registry_.find(style_id);
    if (!style) return error_reply(404, "unknown_style", "no style `" + style_id + "`", {{"style_id", style_id}});

    PromptSpec prompt;
    prompt.name = "request";
    SampleParams params;
    try {
      prompt.genre = parse_genre(req.value("genre", std::string("pop")));
      prompt.key = parse_key(req.value("key", std::string("C")));
      prompt.meter = parse_meter(req.value("meter", std::string("4/4")));
      const auto p = req.value("params", nlohmann::json::object());
      params.top_p = p.value("top_p", params.top_p);
      params.temperature = p.value("temperature", params.temperature);
      params.max_new_tokens = p.value("max_new_tokens", params.max_new_tokens);
      params.seed = p.contains("seed") ? p.at("seed").get<std::uint64_t>() : next_seed();
      params.validate();
      for (const auto& bar : req["chords"]) {
        if (!bar.is_array()) return error_reply(400, "malformed_body", "each bar must be an array of chord strings");
        Bar b;
        for (const auto& c : bar) {
          if (!c.is_string()) return error_reply(400, "malformed_body", "chords must be strings");
          const auto text = c.get<std::string>();
          try {
            b.push_back(parse_chord(text, Dialect::guitar));
          } catch (const Error& e) {
            return error_reply(422, std::string(to_string(e.code())), "cannot parse chord `" + text + "`", {{"chord", text}});
          }
        }
        prompt.bars.push_back(std::move(b));
      }
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, "malformed_body", e.what());
    } catch (const Error& e) {
      return error_reply(400, std::string(to_string(e.code())), e.detail());
    }
    if (prompt.bars.empty()) return error_reply(400, "malformed_body", "chords must contain at least one bar");

    try {
      const auto vocab = Vocabulary::build();
      const auto result = sample_continuation(*style->model, prompt.prefix(vocab), params);
      nlohmann::json tokens = nlohmann::json::array();
      for (TokenId id : result.generated) tokens.push_back(vocab.token(id).payload);
      return {200,
              {{"style_id", style_id},
               {"seed", params.seed},
               {"params", params.to_json()},
               {"continuation", continuation_bars(result)},
               {"tokens", tokens},
               {"ended", result.ended}}};
    } catch (const Error& e) {
      const int status = e.code() == ErrorCode::prompt_too_long ? 422 : 500;
      return error_reply(status, std::string(to_string(e.code())), e.detail());
    }
  }

 private:
  std::uint64_t next_seed() {
    std::lock_guard<std::mutex> lock(mutex_);
    return seeds_.next_u64() >> 11;  // fits a JSON double exactly
  }

  StyleRegistry registry_;
  std::mutex mutex_;
  Rng seeds_;
};

inline void mount(httplib::Server& server, InferenceService& service) {
  const auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server.Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Get("/models", [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.models()); });
  server.Post("/continue", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.continue_progression(req.body));
  });
}

}  // namespace chordgen
