#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "chordgen/service.hpp"

using namespace chordgen;

namespace {

ModelConfig desk_config() {
  ModelConfig c;
  c.d_model = 64;
  c.heads = 4;
  c.d_ff = 256;
  c.layers = 2;
  c.max_len = 64;
  c.dropout = 0.1;
  return c;
}

std::filesystem::path make_registry() {
  const auto dir = std::filesystem::temp_directory_path() / "chordgen_service";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  nlohmann::json reg = {{"styles", nlohmann::json::array()}};
  const std::vector<std::pair<std::string, std::string>> styles = {
      {"pretrain", "Pop reference"}, {"pop-leaning", "Pop leaning"}, {"balanced", "Balanced"}, {"jazz-leaning", "Jazz leaning"}};
  std::uint64_t seed = 1;
  for (const auto& [id, name] : styles) {
    const auto model = ChordTransformer<double>::init(desk_config(), seed++);
    write_checkpoint(dir / (id + ".bin"), model.to_checkpoint());
    reg["styles"].push_back({{"id", id}, {"name", name}, {"description", name + " test style"}, {"checkpoint", id + ".bin"},
                             {"provenance", "init seed " + std::to_string(seed - 1)}});
  }
  std::ofstream(dir / "registry.json") << reg.dump(2);
  return dir / "registry.json";
}

const std::string kBalancedRequest =
    R"({"style_id": "balanced", "chords": [["Dm7", "G7"], ["Cmaj7"]], "genre": "jazz", "key": "C", "meter": "4/4",
        "params": {"max_new_tokens": 32, "seed": 99}})";

}  // namespace

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { registry_path_ = new std::filesystem::path(make_registry()); }
  static void TearDownTestSuite() { delete registry_path_; }
  static std::filesystem::path* registry_path_;
};

std::filesystem::path* ServiceTest::registry_path_ = nullptr;

TEST_F(ServiceTest, HealthAndModels) {
  InferenceService svc(StyleRegistry::load(*registry_path_));
  EXPECT_EQ(svc.health().status, 200);
  const auto models = svc.models();
  EXPECT_EQ(models.status, 200);
  ASSERT_EQ(models.body["models"].size(), 4u);
  EXPECT_EQ(models.body["models"][0]["style_id"], "pretrain");
  EXPECT_EQ(models.body["models"][2]["description"], "Balanced test style");
  EXPECT_EQ(svc.models().body.dump(), models.body.dump());

  InferenceService empty{StyleRegistry{}};
  EXPECT_EQ(empty.models().status, 200);
  EXPECT_TRUE(empty.models().body["models"].empty());
}

TEST_F(ServiceTest, ContinueProducesBarsAndEchoesSeed) {
  InferenceService svc(StyleRegistry::load(*registry_path_));
  const auto a = svc.continue_progression(kBalancedRequest);
  ASSERT_EQ(a.status, 200) << a.body.dump();
  EXPECT_EQ(a.body["style_id"], "balanced");
  EXPECT_EQ(a.body["seed"], 99);
  EXPECT_FALSE(a.body["tokens"].empty());
  EXPECT_LE(a.body["tokens"].size(), 32u);
  EXPECT_EQ(svc.continue_progression(kBalancedRequest).body.dump(), a.body.dump());

  auto unpinned = nlohmann::json::parse(kBalancedRequest);
  unpinned["params"].erase("seed");
  const auto b = svc.continue_progression(unpinned.dump());
  ASSERT_EQ(b.status, 200);
  auto replay = unpinned;
  replay["params"]["seed"] = b.body["seed"];
  EXPECT_EQ(svc.continue_progression(replay.dump()).body["tokens"], b.body["tokens"]);
}

TEST_F(ServiceTest, ErrorCodes) {
  InferenceService svc(StyleRegistry::load(*registry_path_));
  auto req = nlohmann::json::parse(kBalancedRequest);
  req["style_id"] = "nope";
  const auto missing = svc.continue_progression(req.dump());
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(missing.body["error"]["code"], "unknown_style");

  req = nlohmann::json::parse(kBalancedRequest);
  req["chords"] = nlohmann::json::array({nlohmann::json::array({"Dm7", "Xq9"})});
  const auto bad_chord = svc.continue_progression(req.dump());
  EXPECT_EQ(bad_chord.status, 422);
  EXPECT_EQ(bad_chord.body["error"]["chord"], "Xq9");
  EXPECT_NE(bad_chord.body["error"]["message"].get<std::string>().find("Xq9"), std::string::npos);

  for (const char* body : {"{not json", "[]", R"({"style_id": "balanced"})", R"({"style_id": "balanced", "chords": [1]})",
                           R"({"style_id": "balanced", "chords": []})"}) {
    const auto r = svc.continue_progression(body);
    EXPECT_EQ(r.status, 400) << body;
    EXPECT_TRUE(r.body["error"].contains("code"));
    EXPECT_TRUE(r.body["error"].contains("message"));
  }
}

TEST_F(ServiceTest, RegistryRejectsBadEntries) {
  const auto dir = registry_path_->parent_path();
  nlohmann::json dup = {{"styles", {{{"id", "a"}, {"checkpoint", "balanced.bin"}}, {{"id", "a"}, {"checkpoint", "balanced.bin"}}}}};
  EXPECT_THROW(StyleRegistry::from_json(dup, dir), Error);
  nlohmann::json missing = {{"styles", {{{"id", "a"}, {"checkpoint", "absent.bin"}}}}};
  EXPECT_THROW(StyleRegistry::from_json(missing, dir), Error);
}

TEST_F(ServiceTest, ConcurrentRequestsMatchSerial) {
  InferenceService svc(StyleRegistry::load(*registry_path_));
  std::vector<std::string> bodies;
  for (const char* style : {"pretrain", "pop-leaning", "balanced", "jazz-leaning"}) {
    auto req = nlohmann::json::parse(kBalancedRequest);
    req["style_id"] = style;
    bodies.push_back(req.dump());
  }
  std::vector<std::string> serial, parallel(bodies.size());
  for (const auto& b : bodies) serial.push_back(svc.continue_progression(b).body.dump());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    threads.emplace_back([&, i] { parallel[i] = svc.continue_progression(bodies[i]).body.dump(); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(parallel, serial);
}

TEST_F(ServiceTest, LoopbackHttpAndLatency) {
  InferenceService svc(StyleRegistry::load(*registry_path_));
  httplib::Server server;
  mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto models = client.Get("/models");
  ASSERT_TRUE(models);
  EXPECT_EQ(nlohmann::json::parse(models->body)["models"].size(), 4u);

  const auto start = std::chrono::steady_clock::now();
  const auto res = client.Post("/continue", kBalancedRequest, "application/json");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_LE(seconds, 2.0);
  EXPECT_EQ(nlohmann::json::parse(res->body)["seed"], 99);

  const auto bad = client.Post("/continue", R"({"style_id": "x", "chords": [["C"]]})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 404);

  server.stop();
  loop.join();
}
