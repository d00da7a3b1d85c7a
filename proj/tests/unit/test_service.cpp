#include <algorithm>
#include <atomic>
#include <filesystem>
#include <set>
#include <thread>

#include <httplib.h>

#include "doctest.h"
#include "mero/core/png_io.hpp"
#include "mero/error.hpp"
#include "mero/nn/checkpoint.hpp"
#include "mero/service/http.hpp"
#include "mero/service/store.hpp"
#include "support/tiny_models.hpp"

using namespace mero;
using namespace mero::service;
using mero::testing::corpus_with;
using mero::testing::tiny_bundle;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mero_service_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const core::ProceduralCorpus& corpus() {
  static const auto c = corpus_with(3, 6);
  return c;
}

Pipeline make_pipeline(testing::TinyOptions opt = {}, std::uint64_t seed = 1) {
  return Pipeline(tiny_bundle(corpus().schema, seed, opt), part_lists_of(corpus().samples));
}

CreateRequest request(const std::string& cat, std::optional<std::vector<std::string>> parts, std::uint64_t seed) {
  CreateRequest r;
  r.category = cat;
  r.parts = std::move(parts);
  r.seed = seed;
  return r;
}

std::vector<std::string> all_parts(const core::Schema& schema, const std::string& cat) {
  return schema.category(*schema.find_category(cat)).part_names;
}

EditCommand command(EditKind kind, const EditSession& s, nlohmann::json payload = nlohmann::json::object()) {
  EditCommand c;
  c.kind = kind;
  c.base_revision = s.revision;
  c.payload = std::move(payload);
  return c;
}

std::set<int> painted_slots(const mask::LabelMap& map) {
  std::set<int> out;
  for (auto v : map.canvas.index)
    if (v) out.insert(v - 1);
  return out;
}

std::string paint_png(const core::IndexMap& map) {
  std::vector<core::Rgb> palette(256, core::Rgb{0, 0, 0});
  return base64_encode(core::encode_png_indexed(map, palette));
}

}  // namespace

TEST_CASE("digest and base64 against published vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::vector<std::pair<std::string, std::string>> vectors = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, enc] : vectors) {
    CHECK(base64_encode(plain) == enc);
    CHECK(base64_decode(enc) == plain);
  }
  CHECK_THROWS_AS(base64_decode("Zm9"), FormatError);
  CHECK_THROWS_AS(base64_decode("Zm*v"), FormatError);
}

TEST_CASE("create") {
  const Pipeline pipe = make_pipeline();
  const auto& schema = pipe.schema();

  SUBCASE("same request twice gives identical sessions") {
    const EditSession a = pipe.create(request("cow", std::nullopt, 1), "x");
    const EditSession b = pipe.create(request("cow", std::nullopt, 1), "x");
    CHECK(a == b);
    CHECK(a.revision == 0);
    CHECK(a.image.has_value());
    CHECK(snapshot(a, schema).dump() == snapshot(b, schema).dump());
  }
  SUBCASE("unknown parts are named in the rejection") {
    try {
      pipe.create(request("bird", std::vector<std::string>{"torso", "beak", "wing"}, 1));
      FAIL("expected rejection");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("beak") != std::string::npos);
      CHECK(msg.find("wing") != std::string::npos);
      CHECK(msg.find("torso") == std::string::npos);
    }
    CHECK_THROWS_AS(pipe.create(request("unicorn", std::nullopt, 1)), ValidationError);
    CHECK_THROWS_AS(pipe.create(request("cow", std::vector<std::string>{}, 1)), ValidationError);
  }
  SUBCASE("requested parts become the label-map channels") {
    // With full masks the composed map must equal the smallest box covering
    // each pixel centre (ties: lower slot on top).
    const Pipeline full = make_pipeline({.full_masks = true, .canvas = 32});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto names = all_parts(schema, "person");
      const EditSession s = full.create(request("person", names, seed));
      const auto& cat = schema.category(s.category);
      std::set<int> chosen(cat.part_slots.begin(), cat.part_slots.end());
      for (int k = 0; k < schema.p; ++k) CHECK(bool(s.layout.presence[k]) == bool(chosen.count(k)));
      const int w = s.label_map.canvas.width;
      core::IndexMap expected(w, w);
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < w; ++x) {
          const double cx = (x + 0.5) / w, cy = (y + 0.5) / w;
          int best = -1;
          for (int k : chosen) {
            const auto& b = s.layout.boxes[k];
            if (!(cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1)) continue;
            if (best < 0 || b.area() < s.layout.boxes[best].area() ||
                (b.area() == s.layout.boxes[best].area() && k < best))
              best = k;
          }
          expected.at(y, x) = static_cast<std::uint8_t>(best + 1);
        }
      CHECK(s.label_map.canvas == expected);
      std::set<int> visible;
      for (auto v : expected.index)
        if (v) visible.insert(v - 1);
      CHECK(painted_slots(s.label_map) == visible);
      for (int k : painted_slots(s.label_map)) CHECK(chosen.count(k));
    }
  }
  SUBCASE("absent part list follows the training distribution") {
    PartListTable table;
    const int cow = *schema.find_category("cow");
    const auto full_list = schema.slot_mask(cow);
    auto partial = full_list;
    partial[schema.category(cow).part_slots.back()] = 0;
    table[cow] = {full_list, full_list, partial};
    const Pipeline weighted(pipe.models(), table);
    int full_count = 0;
    const int trials = 3000;
    for (int seed = 0; seed < trials; ++seed) {
      const auto list = weighted.sample_part_list(cow, seed);
      CHECK((list == full_list || list == partial));
      full_count += list == full_list;
    }
    CHECK(std::abs(full_count / double(trials) - 2.0 / 3.0) < 0.03);
    const EditSession s = weighted.create(request("cow", std::nullopt, 5));
    CHECK(s.part_list == weighted.sample_part_list(cow, 5));
  }
  SUBCASE("part lists file round trip") {
    const auto table = part_lists_of(corpus().samples);
    CHECK(part_lists_from_json(part_lists_to_json(table, schema), schema) == table);
    CHECK_THROWS_AS(part_lists_from_json({{"cow", {{"tail-fin"}}}}, schema), FormatError);
  }
}

TEST_CASE("edits") {
  const Pipeline pipe = make_pipeline();
  const auto& schema = pipe.schema();
  const EditSession base = pipe.create(request("person", all_parts(schema, "person"), 7), "s1");
  const auto& cat = schema.category(base.category);

  SUBCASE("stale revision is a conflict") {
    const EditSession next = pipe.apply(base, command(EditKind::render, base));
    CHECK(next.revision == 1);
    CHECK_THROWS_AS(pipe.apply(next, command(EditKind::render, base)), ConflictError);
  }
  SUBCASE("set_masks then render keeps the layout and changes the image") {
    core::IndexMap paint(base.label_map.canvas.width, base.label_map.canvas.height);
    std::fill(paint.index.begin(), paint.index.end(), 255);
    const int slot = cat.part_slots[0];
    for (int y = 0; y < paint.height / 2; ++y)
      for (int x = 0; x < paint.width; ++x) paint.at(y, x) = static_cast<std::uint8_t>(slot + 1);
    const EditSession painted = pipe.apply(base, command(EditKind::set_masks, base, {{"label_map_png", paint_png(paint)}}));
    const EditSession rendered = pipe.apply(painted, command(EditKind::render, painted));
    CHECK(rendered.layout == base.layout);
    CHECK(rendered.mask_latent == base.mask_latent);
    CHECK(rendered.part_list == base.part_list);
    CHECK(rendered.image != base.image);
    CHECK(rendered.image == painted.image);
    for (int y = 0; y < paint.height; ++y)
      for (int x = 0; x < paint.width; ++x)
        CHECK(rendered.label_map.canvas.at(y, x) == (y < paint.height / 2 ? slot + 1 : base.label_map.canvas.at(y, x)));
    CHECK(rendered.revision == 2);
  }
  SUBCASE("set_masks rejects parts that are not present") {
    const EditSession fewer = pipe.apply(base, command(EditKind::set_part_list, base, {{"parts", {cat.part_names[0]}}}));
    core::IndexMap paint(base.label_map.canvas.width, base.label_map.canvas.height);
    paint.at(0, 0) = static_cast<std::uint8_t>(cat.part_slots[1] + 1);
    try {
      pipe.apply(fewer, command(EditKind::set_masks, fewer, {{"label_map_png", paint_png(paint)}}));
      FAIL("expected rejection");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(cat.part_names[1]) != std::string::npos);
    }
    CHECK_THROWS_AS(pipe.apply(fewer, command(EditKind::set_masks, fewer, {{"label_map_png", "!!!!"}})),
                    ValidationError);
    core::IndexMap small(4, 4);
    CHECK_THROWS_AS(pipe.apply(fewer, command(EditKind::set_masks, fewer, {{"label_map_png", paint_png(small)}})),
                    ValidationError);
  }
  SUBCASE("removing a part drops its channel and matches a fresh session") {
    std::vector<std::string> kept(cat.part_names.begin() + 1, cat.part_names.end());
    const EditSession edited = pipe.apply(base, command(EditKind::set_part_list, base, {{"parts", kept}}));
    const int removed = cat.part_slots[0];
    CHECK_FALSE(edited.layout.presence[removed]);
    CHECK(edited.label_map.channel_areas()[removed] == 0);
    CHECK_FALSE(painted_slots(edited.label_map).count(removed));
    EditSession fresh = pipe.create(request("person", kept, 7), "s1");
    fresh.revision = edited.revision;
    CHECK(fresh == edited);
  }
  SUBCASE("invalid geometry is rejected") {
    const std::string part = cat.part_names[0];
    const std::vector<nlohmann::json> bad = {
        {{part, {0.5, 0.1, 0.4, 0.3}}}, {{part, {0.1, 0.1, 1.2, 0.3}}}, {{part, {0.1, 0.1, 0.3}}},
        {{part, "wide"}},               {{"tentacle", {0.1, 0.1, 0.2, 0.2}}}, {{part, {0.2, 0.2, 0.2, 0.5}}}};
    for (const auto& boxes : bad)
      CHECK_THROWS_AS(pipe.apply(base, command(EditKind::set_boxes, base, {{"boxes", boxes}})), ValidationError);
    CHECK_THROWS_AS(pipe.apply(base, command(EditKind::set_boxes, base, {{"boxes", {1, 2}}})), ValidationError);
    CHECK_THROWS_AS(pipe.apply(base, command(EditKind::set_part_list, base, {{"parts", {"beak"}}})), ValidationError);
    CHECK_THROWS_AS(EditCommand::from_json({{"kind", "teleport"}, {"base_revision", 0}}), ValidationError);
  }
  SUBCASE("every edit respects stage isolation") {
    const std::string part = cat.part_names[0];
    const EditSession moved =
        pipe.apply(base, command(EditKind::set_boxes, base, {{"boxes", {{part, {0.1, 0.1, 0.5, 0.6}}}}}));
    CHECK(moved.part_list == base.part_list);
    CHECK(moved.mask_latent == base.mask_latent);
    CHECK(moved.layout.presence == base.layout.presence);
    CHECK(moved.layout.adjacency == base.layout.adjacency);
    CHECK(moved.layout.boxes[cat.part_slots[0]] == core::Box{0.1, 0.1, 0.5, 0.6});
    for (std::size_t i = 1; i < cat.part_slots.size(); ++i)
      CHECK(moved.layout.boxes[cat.part_slots[i]] == base.layout.boxes[cat.part_slots[i]]);

    const EditSession remasked = pipe.apply(base, command(EditKind::regenerate_masks, base));
    CHECK(remasked.layout == base.layout);
    CHECK(remasked.part_list == base.part_list);
    CHECK(remasked.mask_latent != base.mask_latent);

    const EditSession relaid = pipe.apply(base, command(EditKind::regenerate_layout, base));
    CHECK(relaid.part_list == base.part_list);
    CHECK(relaid.mask_latent == base.mask_latent);
    CHECK(relaid.layout.presence == base.layout.presence);
    CHECK(relaid.layout.boxes != base.layout.boxes);

    const EditSession rendered = pipe.apply(base, command(EditKind::render, base));
    CHECK(rendered.layout == base.layout);
    CHECK(rendered.label_map == base.label_map);
    CHECK(rendered.image == base.image);
  }
  SUBCASE("an edit sequence replays to the same state") {
    auto run = [&] {
      EditSession s = pipe.create(request("person", std::nullopt, 21), "r");
      s = pipe.apply(s, command(EditKind::regenerate_layout, s));
      s = pipe.apply(s, command(EditKind::regenerate_masks, s));
      s = pipe.apply(s, command(EditKind::set_boxes, s,
                                {{"boxes", {{schema.category(s.category).part_name_for_slot(s.layout.present_slots()[0]),
                                             {0.2, 0.2, 0.7, 0.9}}}}}));
      s = pipe.apply(s, command(EditKind::regenerate_masks, s));
      return s;
    };
    const EditSession a = run(), b = run();
    CHECK(a == b);
    CHECK(a.revision == 4);
  }
}

TEST_CASE("box enlargement scales the part area by four") {
  // Box-blind decoding keeps the mask fixed, so only the warp changes.
  const Pipeline pipe = make_pipeline({.box_blind_masks = true, .canvas = 128}, 3);
  const auto& schema = pipe.schema();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    EditSession s = pipe.create(request("person", all_parts(schema, "person"), seed), "a");
    const auto& cat = schema.category(s.category);
    // Spread the parts so that the head is never painted over.
    nlohmann::json boxes = nlohmann::json::object();
    const std::string head = cat.part_names[0];
    boxes[head] = {0.02, 0.02, 0.32, 0.32};
    for (std::size_t i = 1; i < cat.part_names.size(); ++i) {
      const double x = 0.66 + 0.08 * static_cast<double>(i - 1);
      boxes[cat.part_names[i]] = {x, 0.7, x + 0.06, 0.98};
    }
    s = pipe.apply(s, command(EditKind::set_boxes, s, {{"boxes", boxes}}));
    const int slot = cat.part_slots[0];
    const double before = s.label_map.channel_areas()[slot];
    if (before < 50) continue;  // the untrained decoder left the head nearly empty
    const EditSession big =
        pipe.apply(s, command(EditKind::set_boxes, s, {{"boxes", {{head, {0.02, 0.02, 0.62, 0.62}}}}}));
    const double after = big.label_map.channel_areas()[slot];
    CHECK(after / before == doctest::Approx(4.0).epsilon(0.15));
    CHECK(big.mask_latent == s.mask_latent);
    ++checked;
  }
  CHECK(checked >= 6);
}

TEST_CASE("session store") {
  const Pipeline pipe = make_pipeline();
  TempDir tmp("store");
  const fs::path root = tmp.path / "sessions";

  SUBCASE("bundles round trip and survive a restart") {
    EditSession a, b;
    {
      SessionService service(pipe, root);
      a = service.create(request("cow", std::nullopt, 1));
      b = service.create(request("bird", std::nullopt, 2));
      b = service.edit(b.id, command(EditKind::regenerate_masks, b));
      CHECK(a.id != b.id);
    }
    CHECK(fs::exists(root / a.id / "session.json"));
    CHECK(fs::exists(root / a.id / "label_map.png"));
    CHECK(fs::exists(root / a.id / "image.png"));
    SessionService again(pipe, root);
    CHECK(again.get(a.id) == a);
    CHECK(again.get(b.id) == b);
    CHECK(again.store().quarantined().empty());
    const EditSession c = again.create(request("cow", std::nullopt, 3));
    CHECK(c.id != a.id);
    CHECK(c.id != b.id);
    CHECK_THROWS_AS(again.get("s999999"), NotFoundError);
  }
  SUBCASE("corrupt bundles are quarantined and the rest load") {
    std::string good, bad, tampered;
    {
      SessionService service(pipe, root);
      good = service.create(request("cow", std::nullopt, 1)).id;
      bad = service.create(request("cow", std::nullopt, 2)).id;
      tampered = service.create(request("cow", std::nullopt, 3)).id;
    }
    core::write_file(root / bad / "session.json", "{ not json");
    // Parses, but the label map no longer matches the layout.
    auto j = nlohmann::json::parse(core::read_file(root / tampered / "session.json"));
    j["layout"]["boxes"][j["label_map"]["boxes"].size() - 1] = {0.0, 0.0, 0.5, 0.5};
    j["layout"]["presence"][j["layout"]["presence"].size() - 1] = 1;
    j["part_list"][j["part_list"].size() - 1] = 1;
    core::write_file(root / tampered / "session.json", j.dump());
    SessionService service(pipe, root);
    CHECK(service.ids() == std::vector<std::string>{good});
    CHECK(service.store().quarantined().size() == 2);
    CHECK(fs::exists(root / "quarantine" / bad / "session.json"));
    CHECK_FALSE(fs::exists(root / bad));
  }
  SUBCASE("a store path that is a file is moved aside") {
    core::write_file(root, "garbage");
    SessionService service(pipe, root);
    CHECK(fs::is_directory(root));
    CHECK(service.ids().empty());
    CHECK(service.store().quarantined().size() == 1);
    CHECK(core::read_file(service.store().quarantined()[0]) == "garbage");
  }
  SUBCASE("an interrupted save is rolled back") {
    std::string id;
    EditSession original;
    {
      SessionService service(pipe, root);
      original = service.create(request("cow", std::nullopt, 1));
      id = original.id;
    }
    // Crash after live -> old, before new -> live.
    fs::rename(root / id, root / ("." + id + ".old"));
    fs::create_directories(root / ("." + id + ".new"));
    SessionService service(pipe, root);
    CHECK(service.get(id) == original);
    CHECK_FALSE(fs::exists(root / ("." + id + ".new")));
  }
}

TEST_CASE("concurrent edits on one session: exactly one commit wins") {
  const Pipeline pipe = make_pipeline();
  TempDir tmp("concurrency");
  SessionService service(pipe, tmp.path);
  const EditSession s = service.create(request("cow", std::nullopt, 1));
  const EditSession other = service.create(request("bird", std::nullopt, 1));
  std::atomic<int> ok{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t)
    threads.emplace_back([&, t] {
      const EditSession& target = t % 2 ? other : s;
      try {
        service.edit(target.id, command(EditKind::regenerate_masks, target));
        ++ok;
      } catch (const ConflictError&) {
        ++conflicts;
      }
    });
  for (auto& th : threads) th.join();
  CHECK(ok == 2);
  CHECK(conflicts == 4);
  CHECK(service.get(s.id).revision == 1);
  CHECK(service.get(other.id).revision == 1);
}

TEST_CASE("http interface") {
  const auto& schema = corpus().schema;
  TempDir tmp("http");
  // Checkpoints on disk so that the health hashes have something to cover.
  {
    nn::Rng rng(1);
    auto bundle = tiny_bundle(schema, 1);
    box::BoxGcnVae b = *bundle.box;
    mask::LabelMapVae m = *bundle.mask;
    translate::Translator t = *bundle.translator;
    box::save_box_model(tmp.path / "models" / "box.ckpt", b);
    mask::save_mask_model(tmp.path / "models" / "labelmap.ckpt", m);
    translate::save_translator(tmp.path / "models" / "label2obj.ckpt", t);
    core::save_schema(tmp.path / "models" / "schema.json", schema);
  }
  const auto models = chain::load_models(tmp.path / "models");
  const Pipeline pipe(models, part_lists_of(corpus().samples));
  const auto hashes = checkpoint_hashes(tmp.path / "models");
  CHECK(hashes.at("box") == sha256_hex(core::read_file(tmp.path / "models" / "box.ckpt")));
  CHECK(hashes.size() == 4);

  auto service = std::make_unique<SessionService>(pipe, tmp.path / "store");
  auto server = std::make_unique<HttpServer>(*service, HttpOptions{"127.0.0.1", 0, hashes});
  server->bind();
  std::thread runner([&] { server->run(); });
  httplib::Client client("127.0.0.1", server->port());
  client.set_read_timeout(60);

  SUBCASE("health and schema") {
    const auto res = client.Get("/health");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto j = nlohmann::json::parse(res->body);
    CHECK(j["status"] == "ok");
    CHECK(j["checkpoints"]["label2obj"] == hashes.at("label2obj"));
    const auto sres = client.Get("/schema");
    REQUIRE(sres);
    const auto sj = nlohmann::json::parse(sres->body);
    CHECK(sj["p"] == schema.p);
    CHECK(core::schema_from_json(sj).categories.size() == schema.categories.size());
  }
  SUBCASE("create, edit and render match the in-process path byte for byte") {
    const CreateRequest req = request("bird", std::nullopt, 11);
    const auto created = client.Post("/sessions", req.to_json().dump(), "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    const auto snap = nlohmann::json::parse(created->body);
    const std::string id = snap["id"];

    EditSession local = pipe.create(req, id);
    CHECK(created->body == snapshot(local, schema).dump());

    const auto& cat = schema.category(local.category);
    const std::string part = cat.part_name_for_slot(local.layout.present_slots()[0]);
    const std::vector<EditCommand> edits = {
        command(EditKind::set_boxes, local, {{"boxes", {{part, {0.1, 0.2, 0.6, 0.9}}}}}),
        [&] {
          auto c = command(EditKind::regenerate_masks, local);
          c.base_revision = 1;
          return c;
        }(),
        [&] {
          auto c = command(EditKind::render, local);
          c.base_revision = 2;
          return c;
        }(),
    };
    for (const auto& e : edits) {
      local = pipe.apply(local, e);
      const auto res = client.Post("/sessions/" + id + "/edits", e.to_json().dump(), "application/json");
      REQUIRE(res);
      CHECK(res->status == 200);
      CHECK(res->body == snapshot(local, schema).dump());
    }
    const auto got = client.Get("/sessions/" + id);
    REQUIRE(got);
    CHECK(got->body == snapshot(local, schema).dump());
    const auto lm = client.Get("/sessions/" + id + "/label_map.png");
    REQUIRE(lm);
    CHECK(lm->body == label_map_png(local));
    CHECK(lm->get_header_value("Content-Type") == "image/png");
    const auto img = client.Get("/sessions/" + id + "/image.png");
    REQUIRE(img);
    CHECK(img->body == *image_png(local));
    const auto side = client.Get("/sessions/" + id + "/label_map.json");
    REQUIRE(side);
    CHECK(mask::label_map_from(lm->body, side->body) == local.label_map);

    // A restarted service serves the same state.
    server->stop();
    runner.join();
    server.reset();
    service = std::make_unique<SessionService>(pipe, tmp.path / "store");
    server = std::make_unique<HttpServer>(*service, HttpOptions{"127.0.0.1", 0, hashes});
    server->bind();
    runner = std::thread([&] { server->run(); });
    httplib::Client again("127.0.0.1", server->port());
    const auto after = again.Get("/sessions/" + id);
    REQUIRE(after);
    CHECK(after->body == snapshot(local, schema).dump());
  }
  SUBCASE("second client with a stale revision gets a conflict") {
    const auto created = client.Post("/sessions", request("cow", std::nullopt, 2).to_json().dump(), "application/json");
    REQUIRE(created);
    const std::string id = nlohmann::json::parse(created->body)["id"];
    const nlohmann::json edit = {{"kind", "regenerate_masks"}, {"base_revision", 0}, {"payload", nlohmann::json::object()}};
    httplib::Client second("127.0.0.1", server->port());
    const auto first = client.Post("/sessions/" + id + "/edits", edit.dump(), "application/json");
    const auto stale = second.Post("/sessions/" + id + "/edits", edit.dump(), "application/json");
    REQUIRE(first);
    REQUIRE(stale);
    CHECK(first->status == 200);
    CHECK(stale->status == 409);
    CHECK(nlohmann::json::parse(stale->body)["revision"] == 1);
  }
  SUBCASE("errors map to statuses") {
    const auto missing = client.Get("/sessions/s424242");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    const auto bad_part = client.Post(
        "/sessions", request("bird", std::vector<std::string>{"beak"}, 1).to_json().dump(), "application/json");
    REQUIRE(bad_part);
    CHECK(bad_part->status == 422);
    CHECK(bad_part->body.find("beak") != std::string::npos);
    const auto junk = client.Post("/sessions", "{", "application/json");
    REQUIRE(junk);
    CHECK(junk->status == 400);
  }
  SUBCASE("a busy port fails at startup") {
    HttpServer clash(*service, HttpOptions{"127.0.0.1", server->port(), {}});
    CHECK_THROWS_AS(clash.bind(), Error);
  }
  server->stop();
  runner.join();
}
