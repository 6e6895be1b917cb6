#include <doctest.h>

// Eigen first: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include "padkit/io.hpp"
#include "padkit/study.hpp"
#include "padkit/study_server.hpp"

#include <httplib.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace padkit;
using namespace padkit::study;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct StudyFixture {
    fs::path root;
    fs::path manifest_path;
    Manifest manifest;

    StudyFixture(const std::string& name, int pairs) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root / "images");
        json j;
        j["pairs"] = json::array();
        Rng rng(5);
        for (int i = 0; i < pairs; ++i) {
            ScalarGrid2D t(8, 8, UnitTag::normalized), s(8, 8, UnitTag::normalized);
            for (Eigen::Index k = 0; k < 64; ++k) {
                t.values.data()[k] = uniform01(rng);
                s.values.data()[k] = uniform01(rng);
            }
            const std::string tn = "images/t" + std::to_string(i), sn = "images/s" + std::to_string(i);
            io::write_tensor(t, root / tn);
            io::write_tensor(s, root / sn);
            j["pairs"].push_back({{"target", tn + ".json"}, {"synthetic", sn + ".json"}});
        }
        manifest_path = root / "manifest.json";
        std::ofstream(manifest_path) << j.dump();
        manifest = load_manifest(manifest_path);
    }
    ~StudyFixture() { fs::remove_all(root); }
};

std::pair<int, int> png_size(const std::string& png) {
    REQUIRE(png.size() > 24);
    CHECK(png.substr(1, 3) == "PNG");
    auto be32 = [&](std::size_t off) {
        return (int(static_cast<unsigned char>(png[off])) << 24) | (int(static_cast<unsigned char>(png[off + 1])) << 16) |
               (int(static_cast<unsigned char>(png[off + 2])) << 8) | int(static_cast<unsigned char>(png[off + 3]));
    };
    return {be32(16), be32(20)};
}

ResponseRecord rec(bool correct, int confidence) {
    ResponseRecord r;
    r.correct = correct;
    r.confidence = confidence;
    return r;
}

} // namespace

TEST_CASE("placements are seeded and balanced") {
    int left = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
        CHECK(synthetic_on_left(42, i) == synthetic_on_left(42, i));
        left += synthetic_on_left(42, i) ? 1 : 0;
    }
    CHECK(std::abs(left - 5000) < 300);
    int differ = 0;
    for (std::size_t i = 0; i < 64; ++i) differ += synthetic_on_left(1, i) != synthetic_on_left(2, i) ? 1 : 0;
    CHECK(differ > 10);
}

TEST_CASE("summary arithmetic") {
    std::vector<StudySession> sessions;
    const int correct[] = {22, 29, 24, 21};
    const int conf[][4] = {{3, 3, 3, 2}, {3, 3, 4, 2}, {4, 4, 4, 3}, {3, 3, 2, 4}};
    for (int o = 0; o < 4; ++o) {
        StudySession s;
        s.observer_id = "Observer " + std::to_string(o + 1);
        for (int k = 0; k < 50; ++k) s.responses.push_back(rec(k < correct[o], conf[o][k % 4]));
        sessions.push_back(s);
    }
    const Summary sum = summarize(sessions);
    REQUIRE(sum.observers.size() == 4);
    CHECK(sum.observers[0].accuracy_display == 44);
    CHECK(sum.observers[1].accuracy_display == 58);
    CHECK(sum.observers[2].accuracy_display == 48);
    CHECK(sum.observers[3].accuracy_display == 42);
    CHECK(sum.overall.accuracy == 48.0);
    CHECK(sum.overall.median_confidence == 3.0);
    CHECK(sum.observers[2].median_confidence == 4.0);

    std::vector<ResponseRecord> all_right(10, rec(true, 5));
    CHECK(summarize_responses("x", all_right).accuracy == 100.0);
    CHECK(summarize_responses("x", {rec(true, 1), rec(false, 2)}).median_confidence == 1.5);
    CHECK_THROWS_AS(summarize_responses("x", {}), InsufficientData);

    std::ostringstream os;
    write_summary_csv(os, sum);
    CHECK(os.str().find("Summary,48%,3,200,96,48\n") != std::string::npos);
    CHECK(os.str().rfind("observer,accuracy,median_confidence,answered,correct,accuracy_raw\n", 0) == 0);
}

TEST_CASE("rendering") {
    ScalarGrid2D img(4, 6, UnitTag::normalized, 0.0);
    img.values(0, 0) = 1.0;
    const std::string png = render_png(img, 1.0);
    CHECK(png_size(png) == std::pair<int, int>{6, 4});
    ScalarGrid2D a(10, 10, UnitTag::normalized), b(10, 10, UnitTag::normalized);
    for (int i = 0; i < 100; ++i) {
        a.values.data()[i] = i;
        b.values.data()[i] = 100 + i;
    }
    CHECK(pair_window(a, b) == doctest::Approx(199.0 * 0.995).epsilon(1e-12));
}

TEST_CASE("store lifecycle and replay") {
    StudyFixture f("padkit_study_store", 4);
    const fs::path logs = f.root / "logs";
    std::string id;
    {
        StudyStore store(logs, 1);
        CHECK_THROWS_AS(store.create_session(Manifest{}, "obs", 1), ConfigError);
        Manifest broken = f.manifest;
        broken.pairs[1].synthetic = f.root / "images/missing";
        try {
            (void)store.create_session(broken, "obs", 1);
            FAIL("expected an error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("missing") != std::string::npos);
        }

        const StudySession s = store.create_session(f.manifest, "obs", 77);
        id = s.session_id;
        CHECK(s.pairs.size() == 4);
        CHECK(s.cursor() == 0);
        const StudySession twin = store.create_session(f.manifest, "obs2", 77);
        CHECK(twin.synthetic_left == s.synthetic_left);
        CHECK(twin.session_id != s.session_id);

        const NextPair n0 = store.next_pair(id);
        CHECK_FALSE(n0.done);
        CHECK(n0.pair_index == 0);
        CHECK(store.next_pair(id).left_token == n0.left_token);
        const auto l = png_size(store.image(n0.left_token));
        const auto r = png_size(store.image(n0.right_token));
        CHECK(l == r);
        CHECK(l == std::pair<int, int>{8, 8});
        CHECK(n0.left_token.find("target") == std::string::npos);
        CHECK(n0.left_token.find("synthetic") == std::string::npos);
        CHECK_THROWS_AS((void)store.image("deadbeef"), NotFoundError);

        const Side syn_side = s.synthetic_left[0] ? Side::left : Side::right;
        const ResponseRecord r0 = store.record_response(id, 0, syn_side, 4);
        CHECK(r0.correct);
        CHECK_THROWS_AS(store.record_response(id, 0, syn_side, 4), ConflictError);
        CHECK_THROWS_AS(store.record_response(id, 2, syn_side, 4), SequenceError);
        CHECK_THROWS_AS(store.record_response(id, 1, syn_side, 6), InvalidParameter);
        CHECK_THROWS_AS(store.record_response(id, 1, syn_side, 0), InvalidParameter);
        CHECK_FALSE(store.record_response(id, 1, s.synthetic_left[1] ? Side::right : Side::left, 2).correct);
        CHECK(store.session(id).cursor() == 2);
        CHECK_FALSE(store.completed(id));
        CHECK_THROWS_AS(store.next_pair("ffff"), NotFoundError);
    }
    {
        // Restart: the cursor and records come back from the log.
        StudyStore store(logs, 2);
        const StudySession s = store.session(id);
        CHECK(s.cursor() == 2);
        CHECK(s.responses[0].correct);
        CHECK_FALSE(s.responses[1].correct);
        CHECK(store.next_pair(id).pair_index == 2);
        store.record_response(id, 2, Side::left, 3);
        store.record_response(id, 3, Side::left, 3);
        CHECK(store.next_pair(id).done);
        CHECK_THROWS_AS(store.record_response(id, 3, Side::left, 3), ConflictError);
    }
    const auto first = replay_logs(logs);
    const auto second = replay_logs(logs);
    REQUIRE(first.size() == 2);
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].session_id == second[i].session_id);
        CHECK(first[i].cursor() == second[i].cursor());
    }

    // A torn final line is dropped on restart.
    const fs::path log = logs / (id + ".jsonl");
    {
        std::ofstream(log, std::ios::app) << R"({"type":"resp)";
    }
    StudyStore again(logs, 3);
    CHECK(again.session(id).cursor() == 4);
}

TEST_CASE("HTTP API") {
    StudyFixture f("padkit_study_http", 3);
    StudyStore store(f.root / "logs", 9);
    StudyServer server(store, f.manifest, 123);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread th([&] { server.listen(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);

    auto post = [&](const std::string& path, const json& body) {
        auto res = cli.Post(path, body.dump(), "application/json");
        REQUIRE(res);
        return std::make_pair(res->status, json::parse(res->body));
    };

    auto [st, created] = post("/api/sessions", {{"observer_id", "reader-1"}, {"seed", 5}});
    CHECK(st == 201);
    const std::string id = created["session_id"];
    CHECK(created["pair_count"] == 3);
    CHECK(post("/api/sessions", {{"seed", 5}}).first == 400);
    CHECK(post("/api/sessions", {{"observer_id", "x"}, {"colour", 1}}).first == 400);

    const auto summary_early = cli.Get("/api/sessions/" + id + "/summary");
    CHECK(summary_early->status == 409);

    const StudySession truth = store.session(id);
    int correct = 0;
    for (int k = 0; k < 3; ++k) {
        const auto next = cli.Get("/api/sessions/" + id + "/next");
        REQUIRE(next);
        const json n = json::parse(next->body);
        CHECK(n["done"] == false);
        CHECK(n["pair_index"] == k);
        const std::string lu = n["left_image_url"], ru = n["right_image_url"];
        CHECK(next->body.find("target") == std::string::npos);
        CHECK(next->body.find("synthetic") == std::string::npos);
        const auto li = cli.Get(lu), ri = cli.Get(ru);
        REQUIRE(li);
        REQUIRE(ri);
        CHECK(li->status == 200);
        CHECK(li->get_header_value("Content-Type") == "image/png");
        CHECK(png_size(li->body) == png_size(ri->body));

        const std::string side = k == 1 ? "right" : "left";
        correct += (side == "left") == truth.synthetic_left[std::size_t(k)] ? 1 : 0;
        const auto [rs, ack] = post("/api/sessions/" + id + "/responses",
                                    {{"pair_index", k}, {"chosen_side", side}, {"confidence", 3}});
        CHECK(rs == 201);
        CHECK(ack.contains("correct") == false);
        CHECK(post("/api/sessions/" + id + "/responses", {{"pair_index", k}, {"chosen_side", side}, {"confidence", 3}})
                  .first == 409);
    }
    CHECK(post("/api/sessions/" + id + "/responses", {{"pair_index", 0}, {"chosen_side", "up"}, {"confidence", 3}})
              .first == 400);
    const json done = json::parse(cli.Get("/api/sessions/" + id + "/next")->body);
    CHECK(done["done"] == true);
    const auto summary = cli.Get("/api/sessions/" + id + "/summary");
    REQUIRE(summary);
    CHECK(summary->status == 200);
    const json sj = json::parse(summary->body);
    CHECK(sj["correct"] == correct);
    CHECK(sj["median_confidence"] == 3.0);
    CHECK(cli.Get("/api/sessions/abc/next")->status == 404);
    CHECK(cli.Get("/img/0123")->status == 404);

    // Out-of-order and bad confidence on a fresh session.
    const std::string id2 = post("/api/sessions", {{"observer_id", "reader-2"}}).second["session_id"];
    CHECK(post("/api/sessions/" + id2 + "/responses", {{"pair_index", 1}, {"chosen_side", "left"}, {"confidence", 3}})
              .first == 422);
    const auto bad = post("/api/sessions/" + id2 + "/responses",
                          {{"pair_index", 0}, {"chosen_side", "left"}, {"confidence", 6}});
    CHECK(bad.first == 400);
    CHECK(bad.second["code"] == "validation_error");
    CHECK(bad.second.contains("message"));

    server.stop();
    th.join();
}
