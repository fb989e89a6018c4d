#include <doctest.h>

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "sgan/error.hpp"
#include "sgan/rng.hpp"
#include "sgan/service.hpp"
#include "support/tiny.hpp"

using namespace sgan;
using namespace sgan::testing;

namespace {

Bytes random_png(int w, int h, std::uint64_t seed, int channels = 3) {
  Rng rng(seed);
  Image8 img{w, h, channels, {}};
  img.pixels.resize(static_cast<size_t>(w * h * channels));
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return encode_png(img);
}

std::string b64_image(std::uint64_t seed, int side = 8) { return base64_encode(random_png(side, side, seed)); }

std::string b64_mask(int side, bool on) {
  Tensor<float> m(Shape{1, 1, side, side});
  m.fill(on ? 1.f : 0.f);
  return base64_encode(mask_to_png(m));
}

SpatialGan<float> tiny_model() { return SpatialGan<float>(tiny_config(), 3); }

std::string post_project(EditService& svc, std::uint64_t seed) {
  const ServiceResponse r = svc.handle("POST", "/project", Json{{"image", b64_image(seed)}}.dump());
  REQUIRE(r.status == 200);
  return r.body.at("id").get<std::string>();
}

SemanticDirection unit_direction(const NetworkConfig& c) {
  SemanticDirection d;
  d.direction = Tensor<float>(Shape{c.stylemap_channels});
  d.direction[0] = 1.f;
  d.sigma = 0.5;
  return d;
}

void check_error(const ServiceResponse& r, int status) {
  CHECK(r.status == status);
  REQUIRE(r.body.contains("error"));
  CHECK(r.body["error"].contains("code"));
  CHECK(r.body["error"]["message"].is_string());
}

}  // namespace

TEST_SUITE("base64") {
  TEST_CASE("known vectors") {
    auto bytes = [](std::string s) { return Bytes(s.begin(), s.end()); };
    CHECK(base64_encode(bytes("")) == "");
    CHECK(base64_encode(bytes("f")) == "Zg==");
    CHECK(base64_encode(bytes("fo")) == "Zm8=");
    CHECK(base64_encode(bytes("foo")) == "Zm9v");
    CHECK(base64_encode(bytes("foobar")) == "Zm9vYmFy");
    CHECK(base64_decode("Zm9vYg==") == bytes("foob"));
    CHECK(base64_decode("data:image/png;base64,Zm8=") == bytes("fo"));
  }

  TEST_CASE("round trip over all byte values") {
    for (size_t n = 0; n < 260; n += 7) {
      Bytes b(n);
      for (size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37 + 11);
      CHECK(base64_decode(base64_encode(b)) == b);
    }
  }

  TEST_CASE("malformed input") {
    CHECK_THROWS_AS(base64_decode("Zm9"), ConfigError);
    CHECK_THROWS_AS(base64_decode("Zm9*"), ConfigError);
    CHECK_THROWS_AS(base64_decode("Z===") , ConfigError);
    CHECK_THROWS_AS(base64_decode("Zg==Zm9v"), ConfigError);
    CHECK_THROWS_AS(base64_decode("data:image/png,Zm8="), ConfigError);
  }
}

TEST_SUITE("session store") {
  TEST_CASE("evicts least recently used") {
    SessionStore s(2);
    auto mk = [] { return std::make_shared<const Session>(); };
    s.put("a", mk());
    s.put("b", mk());
    CHECK(s.get("a"));  // a is now most recent
    s.put("c", mk());
    CHECK(s.size() == 2);
    CHECK(s.get("a"));
    CHECK_FALSE(s.get("b"));
    CHECK(s.get("c"));
  }

  TEST_CASE("held session survives eviction") {
    SessionStore s(1);
    auto a = std::make_shared<Session>();
    a->thumbnail = {1, 2, 3};
    s.put("a", a);
    auto held = s.get("a");
    s.put("b", std::make_shared<const Session>());
    CHECK_FALSE(s.get("a"));
    CHECK(held->thumbnail == Bytes{1, 2, 3});
  }
}

TEST_SUITE("service contract") {
  TEST_CASE("health") {
    EditService svc(tiny_model(), {}, {}, "tiny");
    const ServiceResponse r = svc.handle("GET", "/health", "");
    CHECK(r.status == 200);
    CHECK(r.body["status"] == "ok");
    CHECK(r.body["model"] == "tiny");
    CHECK(r.body["image_size"] == 8);
    check_error(svc.handle("POST", "/health", "{}"), 405);
  }

  TEST_CASE("project is deterministic and content addressed") {
    EditService svc(tiny_model());
    const Json req{{"image", b64_image(1)}};
    const ServiceResponse a = svc.handle("POST", "/project", req.dump());
    const ServiceResponse b = svc.handle("POST", "/project", req.dump());
    REQUIRE(a.status == 200);
    CHECK(a.body["id"] == b.body["id"]);
    CHECK(a.body["reconstruction"] == b.body["reconstruction"]);
    CHECK(svc.sessions().size() == 1);
    CHECK(post_project(svc, 2) != a.body["id"].get<std::string>());

    Editor ed(svc.model());
    const Tensor<float> expect = ed.reconstruct(image_from_png(random_png(8, 8, 1), 8));
    CHECK(image_to_png(expect) == base64_decode(a.body["reconstruction"].get<std::string>()));
  }

  TEST_CASE("edit with empty and full masks") {
    EditService svc(tiny_model());
    const std::string o = post_project(svc, 1), r = post_project(svc, 2);
    const auto rec = [&](std::uint64_t seed) {
      return svc.handle("POST", "/project", Json{{"image", b64_image(seed)}}.dump()).body["reconstruction"];
    };
    for (const char* space : {"wplus", "w"}) {
      CAPTURE(space);
      const ServiceResponse e0 = svc.handle(
          "POST", "/edit", Json{{"original_id", o}, {"reference_id", r}, {"mask", b64_mask(8, false)}, {"space", space}}.dump());
      const ServiceResponse e1 = svc.handle(
          "POST", "/edit", Json{{"original_id", o}, {"reference_id", r}, {"mask", b64_mask(16, true)}, {"space", space}}.dump());
      REQUIRE(e0.status == 200);
      REQUIRE(e1.status == 200);
      CHECK(e0.body["image"] == rec(1));
      CHECK(e1.body["image"] == rec(2));
    }
    check_error(svc.handle("POST", "/edit",
                           Json{{"original_id", o}, {"reference_id", r}, {"mask", b64_mask(8, true)}, {"space", "z"}}.dump()),
                400);
    check_error(svc.handle("POST", "/edit", Json{{"original_id", o}, {"reference_id", r}, {"mask", b64_mask(4, true)}}.dump()),
                400);
  }

  TEST_CASE("interpolate endpoints") {
    EditService svc(tiny_model());
    const std::string a = post_project(svc, 1), b = post_project(svc, 2);
    Editor ed(svc.model());
    const Tensor<float> xa = image_from_png(random_png(8, 8, 1), 8), xb = image_from_png(random_png(8, 8, 2), 8);
    for (double t : {0.0, 0.25, 1.0}) {
      const ServiceResponse r = svc.handle("POST", "/interpolate", Json{{"id_a", a}, {"id_b", b}, {"t", t}}.dump());
      REQUIRE(r.status == 200);
      CHECK(base64_decode(r.body["image"].get<std::string>()) ==
            image_to_png(ed.interpolate(xa, xb, static_cast<float>(t))));
    }
    check_error(svc.handle("POST", "/interpolate", Json{{"id_a", a}, {"id_b", b}, {"t", 1.5}}.dump()), 400);
    check_error(svc.handle("POST", "/interpolate", Json{{"id_a", a}, {"id_b", b}, {"t", "half"}}.dump()), 400);
  }

  TEST_CASE("transplant") {
    EditService svc(tiny_model());
    const std::string a = post_project(svc, 1), b = post_project(svc, 2);
    const Json box00{{"top", 0}, {"left", 0}, {"height", 1}, {"width", 1}};
    const Json box11{{"top", 1}, {"left", 1}, {"height", 1}, {"width", 1}};
    const ServiceResponse r = svc.handle(
        "POST", "/transplant",
        Json{{"original_id", a}, {"reference_id", b}, {"regions", {{{"src", box00}, {"dst", box11}}}}}.dump());
    REQUIRE(r.status == 200);
    Editor ed(svc.model());
    const Tensor<float> expect = ed.transplant(image_from_png(random_png(8, 8, 1), 8),
                                               image_from_png(random_png(8, 8, 2), 8), {{Box{0, 0, 1, 1}, Box{1, 1, 1, 1}}});
    CHECK(base64_decode(r.body["image"].get<std::string>()) == image_to_png(expect));

    const ServiceResponse none =
        svc.handle("POST", "/transplant", Json{{"original_id", a}, {"reference_id", b}, {"regions", Json::array()}}.dump());
    REQUIRE(none.status == 200);
    CHECK(none.body["image"] ==
          svc.handle("POST", "/project", Json{{"image", b64_image(1)}}.dump()).body["reconstruction"]);

    const Json outside{{"top", 1}, {"left", 1}, {"height", 2}, {"width", 1}};
    check_error(svc.handle("POST", "/transplant",
                           Json{{"original_id", a}, {"reference_id", b}, {"regions", {{{"src", outside}, {"dst", box00}}}}}
                               .dump()),
                400);
    check_error(svc.handle("POST", "/transplant",
                           Json{{"original_id", a}, {"reference_id", b}, {"regions", {{{"src", box00}}}}}.dump()),
                400);
  }

  TEST_CASE("semantic") {
    const NetworkConfig c = tiny_config();
    EditService svc(tiny_model(), {{"up", unit_direction(c)}});
    const std::string a = post_project(svc, 1);
    const ServiceResponse zero =
        svc.handle("POST", "/semantic", Json{{"id", a}, {"direction", "up"}, {"strength", 0.0}}.dump());
    REQUIRE(zero.status == 200);
    CHECK(zero.body["image"] ==
          svc.handle("POST", "/project", Json{{"image", b64_image(1)}}.dump()).body["reconstruction"]);

    const ServiceResponse moved =
        svc.handle("POST", "/semantic", Json{{"id", a}, {"direction", "up"}, {"strength", 3.0}}.dump());
    REQUIRE(moved.status == 200);
    Editor ed(svc.model());
    const Tensor<float> expect =
        ed.semantic_edit(image_from_png(random_png(8, 8, 1), 8), unit_direction(c), 3.0);
    CHECK(base64_decode(moved.body["image"].get<std::string>()) == image_to_png(expect));

    const ServiceResponse masked = svc.handle(
        "POST", "/semantic", Json{{"id", a}, {"direction", "up"}, {"strength", 3.0}, {"region", b64_mask(8, false)}}.dump());
    REQUIRE(masked.status == 200);
    CHECK(masked.body["image"] == zero.body["image"]);

    check_error(svc.handle("POST", "/semantic", Json{{"id", a}, {"direction", "down"}, {"strength", 1.0}}.dump()), 404);
  }

  TEST_CASE("direction shape is checked at startup") {
    SemanticDirection d;
    d.direction = Tensor<float>(Shape{5});
    d.direction[0] = 1.f;
    CHECK_THROWS_AS(EditService(tiny_model(), {{"bad", d}}), ConfigError);
  }

  TEST_CASE("errors") {
    ServiceConfig cfg;
    cfg.max_body_bytes = 4096;
    cfg.max_image_side = 16;
    EditService svc(tiny_model(), {}, cfg);
    check_error(svc.handle("POST", "/nope", "{}"), 404);
    check_error(svc.handle("GET", "/project", ""), 405);
    check_error(svc.handle("POST", "/project", "{not json"), 400);
    check_error(svc.handle("POST", "/project", "[]"), 400);
    check_error(svc.handle("POST", "/project", "{}"), 400);
    check_error(svc.handle("POST", "/project", Json{{"image", "!!!!"}}.dump()), 400);
    check_error(svc.handle("POST", "/project", Json{{"image", base64_encode(Bytes(40, 7))}}.dump()), 400);
    check_error(svc.handle("POST", "/project", Json{{"image", base64_encode(random_png(8, 8, 1, 1))}}.dump()), 400);
    check_error(svc.handle("POST", "/project", Json{{"image", base64_encode(random_png(32, 8, 1))}}.dump()), 413);
    check_error(svc.handle("POST", "/project", std::string(5000, ' ')), 413);
    check_error(svc.handle("POST", "/edit", Json{{"original_id", "x"}, {"reference_id", "y"}, {"mask", b64_mask(8, true)}}.dump()),
                404);
    CHECK(svc.sessions().size() == 0);
  }
}

TEST_CASE("http round trip") {
  EditService svc(tiny_model(), {}, {}, "tiny");
  const int port = svc.bind_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server([&] { svc.listen_after_bind(); });
  while (!svc.running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(Json::parse(health->body)["model"] == "tiny");

  const std::string body = Json{{"image", b64_image(1)}}.dump();
  auto proj = cli.Post("/project", body, "application/json");
  REQUIRE(proj);
  CHECK(proj->status == 200);
  CHECK(Json::parse(proj->body) == svc.handle("POST", "/project", body).body);

  auto missing = cli.Post("/interpolate", R"({"id_a":"a","id_b":"b","t":0})", "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(Json::parse(missing->body)["error"]["code"] == "unknown_session");

  auto big = cli.Post("/project", std::string((4u << 20) + 10, 'x'), "application/json");
  REQUIRE(big);
  CHECK(big->status == 413);

  // p50 latency of a desk-sized local edit, reported for information.
  {
    EditService desk(SpatialGan<float>(NetworkConfig::desk(), 1));
    const auto id = [&](std::uint64_t seed) {
      return desk.handle("POST", "/project", Json{{"image", b64_image(seed, 32)}}.dump()).body["id"].get<std::string>();
    };
    const std::string req = Json{{"original_id", id(1)}, {"reference_id", id(2)}, {"mask", b64_mask(32, true)}}.dump();
    std::vector<double> ms;
    for (int i = 0; i < 15; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      CHECK(desk.handle("POST", "/edit", req).status == 200);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(ms.begin(), ms.begin() + 7, ms.end());
    MESSAGE("desk /edit p50 = " << ms[7] << " ms");
  }

  svc.stop();
  server.join();
  CHECK_FALSE(svc.running());
}

TEST_CASE("directions file round trip") {
  const NetworkConfig c = tiny_config();
  SemanticDirection spatial;
  spatial.direction = Tensor<float>(Shape{c.stylemap_channels, c.stylemap_hw, c.stylemap_hw});
  for (std::int64_t i = 0; i < spatial.direction.numel(); ++i) spatial.direction[i] = 0.125f * static_cast<float>(i);
  spatial.sigma = 2.5;
  const std::map<std::string, SemanticDirection> dirs{{"cell", unit_direction(c)}, {"spatial", spatial}};

  const auto path = std::filesystem::temp_directory_path() / "sgan_test_directions.json";
  std::ofstream(path) << directions_to_json(dirs).dump();
  const auto back = load_directions(path);
  REQUIRE(back.size() == 2);
  CHECK(bit_equal(back.at("spatial").direction, spatial.direction));
  CHECK(back.at("spatial").sigma == 2.5);
  CHECK(back.at("cell").per_cell());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_directions(path), NotFoundError);
  std::ofstream(path) << R"({"x": {"shape": [2], "values": [1, 0], "sigma": 1, "extra": 0}})";
  CHECK_THROWS_AS(load_directions(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("concurrent requests agree with serial ones") {
  EditService svc(tiny_model());
  const std::string a = post_project(svc, 1), b = post_project(svc, 2);
  std::vector<std::string> bodies;
  for (int i = 0; i <= 8; ++i)
    bodies.push_back(Json{{"id_a", a}, {"id_b", b}, {"t", i / 8.0}}.dump());
  std::vector<Json> expect;
  for (const auto& body : bodies) expect.push_back(svc.handle("POST", "/interpolate", body).body);

  std::atomic<int> mismatches{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t)
    pool.emplace_back([&, t] {
      for (int k = 0; k < 30; ++k) {
        const size_t i = static_cast<size_t>(k + t) % bodies.size();
        if (svc.handle("POST", "/interpolate", bodies[i]).body != expect[i]) ++mismatches;
        if (k % 10 == 0) post_project(svc, 100 + static_cast<std::uint64_t>(t));
      }
    });
  for (auto& th : pool) th.join();
  CHECK(mismatches == 0);
}
