// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <thread>

#include "diffserve/api_server.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/image.hpp"

using namespace diffserve;
using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<const ModelRegistry> toy_registry() {
  static const std::shared_ptr<const ModelRegistry> reg = [] {
    const fs::path dir = fs::temp_directory_path() / "diffserve_api_models";
    fs::remove_all(dir);
    init_toy_models(dir);
    return std::shared_ptr<const ModelRegistry>(ModelRegistry::load(dir));
  }();
  return reg;
}

fs::path output_dir() { return fs::temp_directory_path() / "diffserve_api_outputs"; }

std::shared_ptr<ApiService> toy_service(ServiceOptions opt = {}) {
  if (opt.concurrency == 0) opt.concurrency = 2;
  return std::make_shared<ApiService>(std::make_shared<PipelineBackend>(toy_registry(), output_dir()), opt);
}

// The sample body with the toy model's 64x64 size.
json sample_body() {
  return json{{"task_id", "001"},   {"prompt", "romantic starry sky"}, {"negative_prompt", "noise, low-quality"},
              {"func_name", "t2i"}, {"steps", 25},                     {"image_num", 1},
              {"width", 64},        {"height", 64},                    {"use_base64", true}};
}

json fast_body() {
  json b = sample_body();
  b["steps"] = 2;
  b["seed"] = 5;
  return b;
}

std::string png_b64(int h, int w, float value) { return to_png_base64(Tensor({3, h, w}, value)); }

std::string gray_png_b64(const GrayImage& g) { return base64_encode(encode_png(g)); }

ApiResponse post(ApiService& svc, const std::string& path, const json& body) {
  return svc.handle("POST", path, body.dump());
}

json poll_until_finished(ApiService& svc, const std::string& id) {
  for (int i = 0; i < 2000; ++i) {
    const ApiResponse r = svc.get_task(id);
    const std::string status = r.body["status"];
    if (status == "done" || status == "failed") return r.body;
    std::this_thread::sleep_for(5ms);
  }
  ADD_FAILURE() << "task " << id << " never finished";
  return {};
}

}  // namespace

// ----------------------------------------------------------------- schema ---

TEST(Schema, SampleBodyParses) {
  const auto r = parse_generation_request(sample_body());
  EXPECT_EQ(r.task_id, "001");
  EXPECT_EQ(r.func_name, TaskKind::kTextToImage);
  EXPECT_EQ(r.steps, 25);
  EXPECT_FALSE(r.seed.has_value());
}

TEST(Schema, UnknownFieldsAreListed) {
  json b = sample_body();
  b.erase("prompt");
  b["promt"] = "typo";
  b["extra"] = 1;
  try {
    parse_generation_request(b);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.fields(), (std::vector<std::string>{"extra", "promt"}));
    EXPECT_NE(std::string(e.what()).find("promt"), std::string::npos);
  }
}

TEST(Schema, FieldSpecificMessages) {
  const auto fields_of = [](json b) {
    try {
      parse_generation_request(b);
    } catch (const SchemaError& e) {
      return e.fields();
    }
    return std::vector<std::string>{};
  };
  json b = sample_body();
  b.erase("width");
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"width"});
  b = sample_body();
  b["steps"] = "25";
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"steps"});
  b = sample_body();
  b["steps"] = 25.0;
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"steps"});
  b = sample_body();
  b["use_base64"] = 1;
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"use_base64"});
  b = sample_body();
  b["func_name"] = "txt2img";
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"func_name"});
  b = sample_body();
  b["seed"] = -1;
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"seed"});
  b = sample_body();
  b["guidance_scale"] = "high";
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"guidance_scale"});
  b = sample_body();
  b["preprocessor"] = "sobel";
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"preprocessor"});
  b = sample_body();
  b["strength"] = 1.5;
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"strength"});
  b = sample_body();
  b["canny_low_threshold"] = 0.5;
  b["canny_high_threshold"] = 0.4;
  EXPECT_EQ(fields_of(b), std::vector<std::string>{"canny_low_threshold"});
  EXPECT_THROW(parse_generation_request(json::array()), SchemaError);
}

TEST(Schema, NumericBounds) {
  const RequestLimits limits;
  for (int n : {0, -1, limits.max_image_num + 1}) {
    json b = sample_body();
    b["image_num"] = n;
    EXPECT_THROW(parse_generation_request(b), SchemaError) << n;
  }
  for (int n = 1; n <= limits.max_image_num; ++n) {
    json b = sample_body();
    b["image_num"] = n;
    EXPECT_NO_THROW(parse_generation_request(b));
  }
  for (int side : {0, 60, 65, limits.max_side + 8, -64}) {
    json b = sample_body();
    b["width"] = side;
    EXPECT_THROW(parse_generation_request(b), SchemaError) << side;
    b = sample_body();
    b["height"] = side;
    EXPECT_THROW(parse_generation_request(b), SchemaError) << side;
  }
  json b = sample_body();
  b["steps"] = 0;
  EXPECT_THROW(parse_generation_request(b), SchemaError);
  b = sample_body();
  b["image_num"] = 6;
  EXPECT_NO_THROW(parse_generation_request(b, RequestLimits{6, 8, 512}));
}

TEST(Schema, MissingImagesAreMissingInput) {
  json b = sample_body();
  b["func_name"] = "i2i";
  try {
    parse_generation_request(b);
    FAIL();
  } catch (const MissingInput& e) {
    EXPECT_NE(std::string(e.what()).find("init_image"), std::string::npos);
  }
  b["func_name"] = "edit";
  EXPECT_THROW(parse_generation_request(b), MissingInput);
  b["func_name"] = "inpaint";
  b["init_image"] = "x";
  try {
    parse_generation_request(b);
    FAIL();
  } catch (const MissingInput& e) {
    EXPECT_NE(std::string(e.what()).find("mask_image"), std::string::npos);
  }
}

TEST(Schema, RequestJsonRoundTrip) {
  json b = fast_body();
  b["lora_name"] = "poem-lora";
  b["lora_strength"] = 0.5;
  b["scheduler"] = "ddpm";
  b["canny_low_threshold"] = 0.2;
  const auto r = parse_generation_request(b);
  EXPECT_EQ(json(r), b);
}

TEST(Schema, ResultAndTaskJson) {
  GenerationResult ok{"a", true, {"img"}, 7, 1.5, std::nullopt};
  const json j = ok;
  EXPECT_FALSE(j.contains("error"));
  const auto back = j.get<GenerationResult>();
  EXPECT_EQ(back.images, ok.images);
  EXPECT_EQ(back.seed, 7u);
  GenerationResult bad{"a", false, {}, 7, 0, "boom"};
  EXPECT_EQ(json(bad)["error"], "boom");

  TaskRecord rec{"task-1", "a", TaskStatus::kDone, 10.0, 11.0, ok};
  const auto rec2 = json(rec).get<TaskRecord>();
  EXPECT_EQ(rec2.status, TaskStatus::kDone);
  EXPECT_EQ(rec2.result->task_id, "a");
  EXPECT_THROW(parse_task_status("paused"), InvalidArgument);
}

TEST(Schema, StatusMapping) {
  EXPECT_EQ(http_status_for(MissingInput("x")), 422);
  EXPECT_EQ(http_status_for(InvalidArgument("x")), 400);
  EXPECT_EQ(http_status_for(SchemaError("x", {})), 400);
  EXPECT_EQ(http_status_for(FormatError("x")), 400);
  EXPECT_EQ(http_status_for(NotFound("x")), 404);
  EXPECT_EQ(http_status_for(ServiceUnavailable("x")), 503);
  EXPECT_EQ(http_status_for(std::runtime_error("x")), 500);
  for (int s : {400, 404, 422, 503}) {
    try {
      throw_for_status(s, "m");
    } catch (const std::exception& e) {
      EXPECT_EQ(http_status_for(e), s);
    }
  }
}

// --------------------------------------------------------------- executor ---

TEST(Executor, AdmitsConcurrencyPlusQueue) {
  BoundedExecutor ex(2, 3);
  std::promise<void> gate;
  std::shared_future<void> open = gate.get_future().share();
  std::atomic<int> done{0};
  for (int i = 0; i < 5; ++i) ex.submit([open, &done] {
      open.wait();
      ++done;
    });
  EXPECT_THROW(ex.submit([] {}), ServiceUnavailable);
  for (int i = 0; i < 200 && ex.in_flight() < 2; ++i) std::this_thread::sleep_for(1ms);
  EXPECT_EQ(ex.in_flight(), 2);
  EXPECT_EQ(ex.queue_depth(), 3);
  gate.set_value();
  for (int i = 0; i < 2000 && done < 5; ++i) std::this_thread::sleep_for(1ms);
  EXPECT_EQ(done, 5);
  for (int i = 0; i < 200 && ex.in_flight() > 0; ++i) std::this_thread::sleep_for(1ms);
  EXPECT_NO_THROW(ex.submit([] {}));
}

TEST(Executor, RejectsBadSizes) {
  EXPECT_THROW(BoundedExecutor(0, 1), InvalidArgument);
  EXPECT_THROW(BoundedExecutor(1, -1), InvalidArgument);
}

// ---------------------------------------------------------------- service ---

TEST(Service, SampleRequestReturnsDecodablePng) {
  auto svc = toy_service();
  const ApiResponse r = post(*svc, "/generate", sample_body());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["task_id"], "001");
  EXPECT_TRUE(r.body["success"].get<bool>());
  EXPECT_FALSE(r.body.contains("error"));
  ASSERT_EQ(r.body["images"].size(), 1u);
  const Tensor img = from_png_base64(r.body["images"][0].get<std::string>());
  EXPECT_EQ(img.shape(), (Shape{3, 64, 64}));
  EXPECT_GT(r.body["elapsed_ms"].get<double>(), 0.0);
  EXPECT_TRUE(r.body["seed"].is_number_unsigned());
}

TEST(Service, DrawnSeedIsEchoedAndReproduces) {
  auto svc = toy_service();
  json b = fast_body();
  b.erase("seed");
  const ApiResponse first = post(*svc, "/generate", b);
  ASSERT_EQ(first.status, 200);
  b["seed"] = first.body["seed"];
  const ApiResponse again = post(*svc, "/generate", b);
  EXPECT_EQ(again.body["images"], first.body["images"]);
}

TEST(Service, BatchUsesConsecutiveSeeds) {
  auto svc = toy_service();
  json b = fast_body();
  b["image_num"] = 3;
  const ApiResponse batch = post(*svc, "/generate", b);
  ASSERT_EQ(batch.status, 200);
  ASSERT_EQ(batch.body["images"].size(), 3u);
  for (int k = 0; k < 3; ++k) {
    json one = fast_body();
    one["seed"] = 5 + k;
    EXPECT_EQ(post(*svc, "/generate", one).body["images"][0], batch.body["images"][k]) << k;
  }
  EXPECT_NE(batch.body["images"][0], batch.body["images"][1]);
}

TEST(Service, AsyncMatchesSync) {
  auto svc = toy_service();
  const ApiResponse sync = post(*svc, "/generate", fast_body());
  const ApiResponse submitted = post(*svc, "/tasks", fast_body());
  ASSERT_EQ(submitted.status, 202);
  EXPECT_EQ(submitted.body["status"], "queued");
  EXPECT_EQ(submitted.body["client_task_id"], "001");
  const json rec = poll_until_finished(*svc, submitted.body["task_id"]);
  EXPECT_EQ(rec["status"], "done");
  EXPECT_EQ(rec["result"]["images"], sync.body["images"]);
  EXPECT_EQ(rec["result"]["task_id"], "001");
  EXPECT_GE(rec["finished_at"].get<double>(), rec["submitted_at"].get<double>());
}

TEST(Service, TaskStatusIsMonotone) {
  ServiceOptions opt;
  opt.concurrency = 1;
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(60ms), opt);
  const std::string first = post(*svc, "/tasks", fast_body()).body["task_id"];
  const std::string second = post(*svc, "/tasks", fast_body()).body["task_id"];
  const std::map<std::string, int> rank{{"queued", 0}, {"running", 1}, {"done", 2}, {"failed", 2}};
  std::set<std::string> seen;
  int last = 0;
  for (int i = 0; i < 400; ++i) {
    const std::string s = svc->get_task(second).body["status"];
    seen.insert(s);
    EXPECT_GE(rank.at(s), last);
    last = rank.at(s);
    if (s == "done") break;
    std::this_thread::sleep_for(2ms);
  }
  EXPECT_TRUE(seen.count("queued"));
  EXPECT_TRUE(seen.count("running"));
  EXPECT_TRUE(seen.count("done"));
  EXPECT_EQ(svc->get_task(first).body["status"], "done");
}

TEST(Service, DuplicateClientIdsGetDistinctTasks) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(1ms));
  const std::string a = post(*svc, "/tasks", fast_body()).body["task_id"];
  const std::string b = post(*svc, "/tasks", fast_body()).body["task_id"];
  EXPECT_NE(a, b);
  EXPECT_EQ(poll_until_finished(*svc, a)["result"]["task_id"], "001");
  EXPECT_EQ(poll_until_finished(*svc, b)["result"]["task_id"], "001");
}

TEST(Service, ExpiredTaskIs404) {
  ServiceOptions opt;
  opt.task_ttl_s = 0.1;
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(1ms), opt);
  const std::string id = post(*svc, "/tasks", fast_body()).body["task_id"];
  poll_until_finished(*svc, id);
  std::this_thread::sleep_for(250ms);
  EXPECT_EQ(svc->handle("GET", "/tasks/" + id, "").status, 404);
  EXPECT_EQ(svc->handle("GET", "/tasks/task-nope", "").status, 404);
}

TEST(Service, FailedTaskCarriesError) {
  struct Failing : StubBackend {
    Failing() : StubBackend(0ms) {}
    GenerationJob prepare(const GenerationRequest&) override {
      return []() -> GenerationResult { throw Error("boom"); };
    }
  };
  auto failing = std::make_shared<ApiService>(std::make_shared<Failing>());
  const json rec = poll_until_finished(*failing, post(*failing, "/tasks", fast_body()).body["task_id"]);
  EXPECT_EQ(rec["status"], "failed");
  EXPECT_FALSE(rec["result"]["success"].get<bool>());
  EXPECT_EQ(rec["result"]["error"], "boom");
  EXPECT_EQ(rec["result"]["task_id"], "001");
  const ApiResponse sync = post(*failing, "/generate", fast_body());
  EXPECT_EQ(sync.status, 500);
  EXPECT_EQ(sync.body["error"], "boom");
}

TEST(Service, InvalidStepsRejectedAtSubmission) {
  auto svc = toy_service();
  json b = fast_body();
  b["func_name"] = "i2i";
  b["init_image"] = png_b64(64, 64, 0.2f);
  b["scheduler"] = "ddim";
  b["steps"] = 5000;  // beyond the training schedule, caught at submission
  EXPECT_EQ(post(*svc, "/tasks", b).status, 400);
}

TEST(Service, StatusCodes) {
  auto svc = toy_service();
  json b = fast_body();
  b["promt"] = "x";
  ApiResponse r = post(*svc, "/generate", b);
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body["fields"], json::array({"promt"}));
  EXPECT_EQ(r.body["task_id"], "001");
  EXPECT_FALSE(r.body["success"].get<bool>());

  EXPECT_EQ(svc->handle("POST", "/generate", "{not json").status, 400);

  b = fast_body();
  b["model"] = "no-such-model";
  EXPECT_EQ(post(*svc, "/generate", b).status, 404);
  b = fast_body();
  b["lora_name"] = "no-such-lora";
  EXPECT_EQ(post(*svc, "/generate", b).status, 404);
  b = fast_body();
  b["controlnet_name"] = "no-such-controlnet";
  EXPECT_EQ(post(*svc, "/tasks", b).status, 404);
  b = fast_body();
  b["scheduler"] = "euler";
  EXPECT_EQ(post(*svc, "/generate", b).status, 404);

  b = fast_body();
  b["func_name"] = "i2i";
  r = post(*svc, "/generate", b);
  EXPECT_EQ(r.status, 422);
  EXPECT_NE(r.body["error"].get<std::string>().find("init_image"), std::string::npos);
  b = fast_body();
  b["controlnet_name"] = "canny-controlnet";
  EXPECT_EQ(post(*svc, "/generate", b).status, 422);

  b = fast_body();
  b["func_name"] = "i2i";
  b["init_image"] = "@@@";
  r = post(*svc, "/generate", b);
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body["fields"], json::array({"init_image"}));

  EXPECT_EQ(svc->handle("GET", "/nowhere", "").status, 404);
  EXPECT_EQ(svc->handle("GET", "/generate", "").status, 405);
  EXPECT_EQ(svc->handle("DELETE", "/tasks/x", "").status, 405);
}

TEST(Service, T2iIgnoresInitImage) {
  auto svc = toy_service();
  json b = fast_body();
  const ApiResponse plain = post(*svc, "/generate", b);
  b["init_image"] = png_b64(64, 64, 0.7f);
  const ApiResponse with_init = post(*svc, "/generate", b);
  ASSERT_EQ(with_init.status, 200);
  EXPECT_EQ(with_init.body["images"], plain.body["images"]);
}

TEST(Service, AllFunctionsAndAdapters) {
  auto svc = toy_service();
  const std::string init = png_b64(64, 64, 0.1f);
  GrayImage mask(64, 64, 0.0f);
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x) mask.at(y, x) = 1.0f;

  json b = fast_body();
  b["func_name"] = "i2i";
  b["init_image"] = init;
  b["strength"] = 0.5;
  EXPECT_EQ(post(*svc, "/generate", b).status, 200);

  b = fast_body();
  b["func_name"] = "inpaint";
  b["init_image"] = init;
  b["mask_image"] = gray_png_b64(mask);
  const ApiResponse inpaint = post(*svc, "/generate", b);
  ASSERT_EQ(inpaint.status, 200);
  // Pixels outside the mask keep the init image.
  const Tensor out = from_png_base64(inpaint.body["images"][0].get<std::string>());
  const Tensor in = from_png_base64(init);
  EXPECT_EQ(out.data()[2 * 64 + 2], in.data()[2 * 64 + 2]);

  b = fast_body();
  b["func_name"] = "edit";
  b["init_image"] = init;
  b["controlnet_name"] = "canny-controlnet";
  b["controlnet_scale"] = 0.7;
  EXPECT_EQ(post(*svc, "/generate", b).status, 200);

  b = fast_body();
  b["lora_name"] = "poem-lora";
  b["lora_strength"] = 0.6;
  b["controlnet_name"] = "depth-controlnet";
  b["preprocessor"] = "depth";
  b["condition_image"] = init;
  EXPECT_EQ(post(*svc, "/generate", b).status, 200);
}

TEST(Service, UploadsAreResizedToRequestSize) {
  auto svc = toy_service();
  json b = fast_body();
  b["func_name"] = "i2i";
  b["init_image"] = png_b64(32, 48, 0.3f);
  const ApiResponse r = post(*svc, "/generate", b);
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(from_png_base64(r.body["images"][0].get<std::string>()).shape(), (Shape{3, 64, 64}));
}

TEST(Service, FilesInsteadOfBase64) {
  auto svc = toy_service();
  json b = fast_body();
  b["use_base64"] = false;
  b["image_num"] = 2;
  const ApiResponse r = post(*svc, "/generate", b);
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body["images"].size(), 2u);
  for (const auto& name : r.body["images"]) {
    const fs::path path = output_dir() / name.get<std::string>();
    ASSERT_TRUE(fs::exists(path)) << path;
    std::ifstream in(path, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(decode_png_rgb(bytes).shape(), (Shape{3, 64, 64}));
  }
  EXPECT_NE(r.body["images"][0], r.body["images"][1]);
}

TEST(Service, TaskIdIsEchoedUnmodified) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(0ms));
  for (const std::string id : std::vector<std::string>{"", "001", "  padded  ", "\xe4\xbb\xbb\xe5\x8a\xa1-7", "a/b?c", std::string(300, 'z')}) {
    json b = fast_body();
    b["task_id"] = id;
    const ApiResponse r = post(*svc, "/generate", b);
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["task_id"], id);
  }
}

TEST(Service, ModelsAndHealth) {
  auto svc = toy_service();
  const json models = svc->handle("GET", "/models", "").body;
  ASSERT_EQ(models.size(), 3u);
  EXPECT_EQ(models[0]["model_name"], "general-large-zh-toy");
  EXPECT_EQ(models[0]["domain_tag"], "General purpose");
  EXPECT_EQ(models[0]["default_width"], 64);
  EXPECT_EQ(models[0]["default_height"], 64);
  EXPECT_GT(models[0]["param_count"].get<std::size_t>(), 0u);
  EXPECT_EQ(models[2]["domain_tag"], "Anime");

  const ApiResponse h = svc->handle("GET", "/health", "");
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body["status"], "ok");
  EXPECT_EQ(h.body["queue_depth"], 0);
  EXPECT_EQ(h.body["in_flight"], 0);
}

TEST(Service, ReadsDoNotMutate) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(1ms));
  const std::string id = post(*svc, "/tasks", fast_body()).body["task_id"];
  poll_until_finished(*svc, id);
  for (const std::string path : std::vector<std::string>{"/health", "/models", "/tasks/" + id}) {
    const auto a = svc->handle("GET", path, "");
    const auto b = svc->handle("GET", path, "");
    EXPECT_EQ(a.status, b.status) << path;
    EXPECT_EQ(a.body, b.body) << path;
  }
}

TEST(Service, CapacityBound) {
  constexpr int kConcurrency = 2, kQueue = 3;
  ServiceOptions opt;
  opt.concurrency = kConcurrency;
  opt.queue_size = kQueue;
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(400ms), opt);
  std::vector<std::future<ApiResponse>> calls;
  for (int i = 0; i < kConcurrency + kQueue; ++i) {
    calls.push_back(std::async(std::launch::async, [svc] { return post(*svc, "/generate", fast_body()); }));
  }
  for (int i = 0; i < 300 && (svc->in_flight() < kConcurrency || svc->queue_depth() < kQueue); ++i) {
    std::this_thread::sleep_for(1ms);
  }
  const json h = svc->health().body;
  EXPECT_EQ(h["in_flight"], kConcurrency);
  EXPECT_EQ(h["queue_depth"], kQueue);
  const ApiResponse rejected = post(*svc, "/generate", fast_body());
  EXPECT_EQ(rejected.status, 503);
  EXPECT_EQ(post(*svc, "/tasks", fast_body()).status, 503);
  for (auto& c : calls) EXPECT_EQ(c.get().status, 200);
}

// ------------------------------------------------------------- preprocess ---

TEST(Preprocess, ConstantImageIsBlankAndSized) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(0ms));
  const ApiResponse r = post(*svc, "/preprocess", json{{"image", png_b64(24, 40, 0.3f)}, {"preprocessor", "canny"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["width"], 40);
  EXPECT_EQ(r.body["height"], 24);
  const GrayImage map = decode_png_gray(base64_decode(r.body["image"].get<std::string>()));
  EXPECT_EQ(map.width, 40);
  EXPECT_EQ(map.height, 24);
  for (float v : map.data) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, MatchesLibraryCanny) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(0ms));
  GrayImage g(16, 16, 0.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) g.at(y, x) = 1.0f;
  const ApiResponse r = post(*svc, "/preprocess",
                             json{{"image", gray_png_b64(g)}, {"preprocessor", "canny"}, {"low_threshold", 0.05},
                                  {"high_threshold", 0.2}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const GrayImage map = decode_png_gray(base64_decode(r.body["image"].get<std::string>()));
  EXPECT_EQ(map, canny(g, 0.05, 0.2));

  const ApiResponse d = post(*svc, "/preprocess", json{{"image", gray_png_b64(g)}, {"preprocessor", "depth"}});
  EXPECT_EQ(d.status, 200);
}

TEST(Preprocess, Validation) {
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(0ms));
  const std::string img = png_b64(16, 16, 0.0f);
  EXPECT_EQ(post(*svc, "/preprocess", json{{"image", img}, {"preprocessor", "sobel"}}).status, 400);
  EXPECT_EQ(post(*svc, "/preprocess", json{{"image", img}}).status, 400);
  EXPECT_EQ(post(*svc, "/preprocess", json{{"image", img}, {"preprocessor", "canny"}, {"thresh", 1}}).status, 400);
  EXPECT_EQ(post(*svc, "/preprocess", json{{"image", "!!"}, {"preprocessor", "canny"}}).status, 400);
  EXPECT_EQ(post(*svc, "/preprocess",
                 json{{"image", img}, {"preprocessor", "canny"}, {"low_threshold", 0.5}, {"high_threshold", 0.1}})
                .status,
            400);
}

// ------------------------------------------------------------------- http ---

TEST(Http, EndToEnd) {
  ServiceOptions opt;
  opt.concurrency = 1;
  opt.queue_size = 1;
  auto svc = std::make_shared<ApiService>(std::make_shared<StubBackend>(300ms), opt);
  HttpServer server(svc, "127.0.0.1", 0);
  const int port = server.start();
  ASSERT_GT(port, 0);

  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Post("/generate", fast_body().dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["task_id"], "001");
  EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");

  res = cli.Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["queue_depth"], 0);
  res = cli.Get("/missing");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  // Capacity over the wire: C + B admitted, the next one refused.
  std::vector<std::future<int>> held;
  for (int i = 0; i < 2; ++i) {
    held.push_back(std::async(std::launch::async, [port] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Post("/generate", fast_body().dump(), "application/json");
      return r ? r->status : -1;
    }));
  }
  for (int i = 0; i < 300 && svc->in_flight() + svc->queue_depth() < 2; ++i) std::this_thread::sleep_for(1ms);
  res = cli.Post("/generate", fast_body().dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
  for (auto& h : held) EXPECT_EQ(h.get(), 200);
  server.stop();
}
