#include "doctest.h"

#include "magnet/errors.hpp"
#include "magnet/service.hpp"
#include "magnet/train.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <thread>

using namespace magnet;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace {

const std::vector<TrialRecord>& trials() {
    static const std::vector<TrialRecord> t = [] {
        ScenarioConfig c = preset("mts2d");
        c.users = 2;
        c.reps = 1;
        return build_dataset(c, default_users(c.users, 5), 5).trials;
    }();
    return t;
}

// Random-init model with a scrambled adaptation head, saved once.
const std::filesystem::path& checkpoint() {
    static const std::filesystem::path p = [] {
        auto path = std::filesystem::temp_directory_path() / "magnet_service_test.ckpt";
        auto [vib, acc] = fit_env_stats(trials(), 5);
        MagnetModel<float> m(model_config_for(preset("mts2d")), truth_registry_2d(), vib, acc, 9);
        std::mt19937_64 rng(3);
        std::normal_distribution<float> n(0.0f, 0.3f);
        for (auto* prm : m.params().all()) {
            if (prm->name.rfind("adapt.l2", 0) != 0) continue;
            for (Eigen::Index i = 0; i < prm->value.size(); ++i) prm->value.data()[i] = n(rng);
        }
        save_model(path, m);
        return path;
    }();
    return p;
}

std::unique_ptr<InferenceService> service() { return InferenceService::from_files(checkpoint()); }

nlohmann::json start_msg(const std::string& gesture, double age) {
    return {{"type", "session_start"},
            {"profile", {{"gesture", gesture}, {"age", age}, {"gender", "female"}}},
            {"scenario", "mts2d"}};
}

nlohmann::json trial_msg() {
    return {{"type", "trial_start"},
            {"targets",
             {{{"id", 0}, {"center", {400.0, 300.0}}, {"size", 65.0}, {"speed", 100.0}, {"dir", {1.0, 0.0}}},
              {{"id", 1}, {"center", {470.0, 300.0}}, {"size", 65.0}, {"speed", 100.0}, {"dir", {0.0, 1.0}}},
              {{"id", 2}, {"center", {900.0, 700.0}}, {"size", 95.0}, {"speed", 0.0}, {"dir", {1.0, 0.0}}}}}};
}

nlohmann::json motion_msg(int frames, double amp, int offset = 0) {
    nlohmann::json f = nlohmann::json::array();
    for (int i = 0; i < frames; ++i) {
        const double k = offset + i;
        f.push_back({amp * std::sin(0.3 * k), amp * std::cos(0.2 * k), 0.1 * amp});
    }
    return {{"type", "motion"}, {"frames", f}};
}

nlohmann::json touch_msg(double x, double y, double t) { return {{"type", "touch"}, {"point", {x, y}}, {"t", t}}; }

std::string only_type(const std::vector<nlohmann::json>& r) {
    REQUIRE(r.size() == 1);
    return r[0].at("type");
}

nlohmann::json run_script(InferenceService& s, const std::string& gesture, double age, double amp) {
    Session ss(s, "x");
    ss.handle(start_msg(gesture, age));
    ss.handle(motion_msg(150, amp));
    ss.handle(trial_msg());
    auto r = ss.handle(touch_msg(430.0, 310.0, 0.2));
    REQUIRE(r.size() == 1);
    return r[0];
}

}  // namespace

TEST_CASE("health reports ok and the checkpoint file hash") {
    auto s = service();
    const auto h = s->health();
    CHECK(h.at("status") == "ok");
    CHECK(h.at("checkpoint") == file_hash(checkpoint()));
    CHECK(s->experts().at("experts").size() == 3);
}

TEST_CASE("from_files rejects a registry that differs from the checkpoint") {
    auto path = std::filesystem::temp_directory_path() / "magnet_service_other.json";
    auto reg = truth_registry_2d();
    reg.experts.pop_back();
    save_registry(path, reg);
    CHECK_THROWS_AS(InferenceService::from_files(checkpoint(), path), ConfigError);
    save_registry(path, truth_registry_2d());
    CHECK_NOTHROW(InferenceService::from_files(checkpoint(), path));
    std::filesystem::remove(path);
}

TEST_CASE("predict payload equals in-process predict byte for byte") {
    auto s = service();
    auto m = load_model(checkpoint());
    for (int i = 0; i < 5; ++i) {
        const auto& t = trials()[static_cast<std::size_t>(i * 7)];
        CHECK(s->predict_payload(trial_to_json(t).dump()) == m->predict(t).to_json().dump());
    }
    CHECK_THROWS_AS(s->predict_payload("{not json"), ParseError);
    CHECK_THROWS_AS(s->predict_payload("{}"), ParseError);
}

TEST_CASE("session errors leave the session intact") {
    auto s = service();
    Session ss(*s, "a");
    CHECK(ss.handle(std::string("{oops"))[0].at("code") == "bad_json");
    CHECK(ss.handle(motion_msg(3, 1.0))[0].at("code") == "no_session");
    CHECK(ss.handle(nlohmann::json{{"kind", "motion"}})[0].at("code") == "bad_message");
    REQUIRE(only_type(ss.handle(start_msg("handheld", 30))) == "session_started");
    CHECK(ss.state().window_frames == 150);

    ss.handle(motion_msg(10, 1.0));
    const auto before = ss.state().motion;
    auto bad_frames = motion_msg(5, 1.0);
    bad_frames["frames"][3] = {1.0, 2.0};
    CHECK(ss.handle(bad_frames)[0].at("code") == "bad_message");
    CHECK(ss.state().motion == before);

    CHECK(ss.handle(nlohmann::json{{"type", "dance"}})[0].at("code") == "unknown_type");
    CHECK(ss.handle(touch_msg(1, 2, 0))[0].at("code") == "no_trial");
    auto bad_trial = trial_msg();
    bad_trial["targets"][1]["id"] = 0;
    CHECK(ss.handle(bad_trial)[0].at("code") == "bad_message");
    CHECK_FALSE(ss.state().trial.has_value());
    auto bad_profile = start_msg("handheld", 130);
    CHECK(ss.handle(bad_profile)[0].at("type") == "error");
    CHECK(ss.state().profile.age == 30);
    CHECK(ss.handle(nlohmann::json{{"type", "session_start"}, {"profile", start_msg("fixed", 30)["profile"]}, {"scenario", "mts3d"}})[0]
              .at("code") == "scenario_mismatch");
    CHECK(ss.state().started);

    REQUIRE(only_type(ss.handle(trial_msg())) == "trial_started");
    CHECK(ss.handle(nlohmann::json{{"type", "touch"}, {"point", {1.0, 2.0, 3.0}}})[0].at("code") == "bad_message");
    CHECK(ss.state().trial.has_value());
    CHECK(only_type(ss.handle(touch_msg(430, 300, 0.1))) == "prediction");
}

TEST_CASE("motion buffer keeps exactly the most recent window") {
    auto s = service();
    Session ss(*s, "b");
    ss.handle(start_msg("fixed", 40));
    ss.handle(motion_msg(100, 1.0, 0));
    CHECK(ss.state().motion.size() == 100);
    ss.handle(motion_msg(120, 1.0, 100));
    REQUIRE(ss.state().motion.size() == 150);
    // Oldest kept frame is global index 70.
    CHECK(ss.state().motion.front().x() == doctest::Approx(std::sin(0.3 * 70)));
    CHECK(ss.state().motion.back().x() == doctest::Approx(std::sin(0.3 * 219)));
    auto obj = motion_msg(0, 1.0);
    obj["frames"] = {{{"acc", {9.0, 8.0, 7.0}}}};
    ss.handle(obj);
    CHECK(ss.state().motion.size() == 150);
    CHECK(ss.state().motion.back().z() == 7.0);
}

TEST_CASE("underfull buffer predicts with a zero-padded, flagged window") {
    auto s = service();
    Session ss(*s, "c");
    ss.handle(start_msg("handheld", 22));
    ss.handle(motion_msg(40, 2.0));
    ss.handle(trial_msg());
    const auto snap = ss.snapshot_trial((Vec(2) << 430, 300).finished(), 0.0);
    CHECK(snap.env.zero_filled);
    CHECK(snap.env.acc.rows() == 150);
    CHECK(snap.env.acc.topRows(110).isZero());
    CHECK(snap.env.acc(149, 0) == doctest::Approx(2.0 * std::sin(0.3 * 39)));
    auto r = ss.handle(touch_msg(430, 300, 0.0));
    REQUIRE(only_type(r) == "prediction");
    CHECK(r[0].at("zero_padded") == true);
    CHECK(r[0].at("buffered_frames") == 40);

    ss.handle(motion_msg(150, 2.0));
    ss.handle(trial_msg());
    r = ss.handle(touch_msg(430, 300, 0.0));
    CHECK(r[0].at("zero_padded") == false);
    // One touch closes the trial.
    CHECK(ss.handle(touch_msg(430, 300, 0.0))[0].at("code") == "no_trial");
}

TEST_CASE("touch scores targets advanced to the touch time") {
    auto s = service();
    Session ss(*s, "d");
    ss.handle(start_msg("fixed", 35));
    ss.handle(motion_msg(150, 0.5));
    ss.handle(trial_msg());
    const Vec p = (Vec(2) << 440, 320).finished();
    const auto snap = ss.snapshot_trial(p, 0.75);
    const auto sc = preset("mts2d");
    TargetState t0 = ss.state().trial->targets[0];
    advance(t0, 0.75, sc.bounds_min, sc.bounds_max);
    CHECK((snap.targets[0].center - t0.center).norm() < 1e-12);
    CHECK(snap.targets[0].center.x() == doctest::Approx(475.0));
    CHECK(snap.targets[2].center == ss.state().trial->targets[2].center);

    const auto direct = s->predict(snap).to_json();
    auto r = ss.handle(nlohmann::json{{"type", "touch"}, {"point", {440.0, 320.0}}, {"t", 0.75}});
    REQUIRE(only_type(r) == "prediction");
    CHECK(r[0].at("ranked") == direct.at("ranked"));
    CHECK(r[0].at("per_target_logp") == direct.at("per_target_logp"));
    CHECK(r[0].at("weights") == direct.at("weights"));
}

TEST_CASE("concurrent sessions do not share state") {
    auto s = service();
    const auto solo_a = run_script(*s, "fixed", 25, 0.2);
    const auto solo_b = run_script(*s, "handheld", 55, 3.0);
    CHECK(solo_a.at("weights") != solo_b.at("weights"));
    nlohmann::json ca, cb;
    for (int rep = 0; rep < 3; ++rep) {
        std::thread ta([&] { ca = run_script(*s, "fixed", 25, 0.2); });
        std::thread tb([&] { cb = run_script(*s, "handheld", 55, 3.0); });
        ta.join();
        tb.join();
        CHECK(ca.dump() == solo_a.dump());
        CHECK(cb.dump() == solo_b.dump());
    }
}

TEST_CASE("server config reads environment overrides") {
    ::setenv("MAGNET_PORT", "9123", 1);
    ::setenv("MAGNET_ADDRESS", "0.0.0.0", 1);
    auto c = server_config_from_env({});
    CHECK(c.port == 9123);
    CHECK(c.address == "0.0.0.0");
    ::setenv("MAGNET_PORT", "http", 1);
    CHECK_THROWS_AS(server_config_from_env({}), ConfigError);
    ::unsetenv("MAGNET_PORT");
    ::unsetenv("MAGNET_ADDRESS");
}

namespace {

http::response<http::string_body> http_call(unsigned short port, http::verb verb, const std::string& target,
                                            const std::string& body = {}) {
    boost::asio::io_context io;
    tcp::socket sock(io);
    sock.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "localhost");
    req.body() = body;
    req.prepare_payload();
    http::write(sock, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(sock, buf, res);
    beast::error_code ec;
    sock.shutdown(tcp::socket::shutdown_both, ec);
    return res;
}

std::vector<nlohmann::json> ws_script(unsigned short port, const std::vector<nlohmann::json>& msgs, int replies) {
    boost::asio::io_context io;
    tcp::socket sock(io);
    sock.connect(tcp::endpoint(boost::asio::ip::make_address("127.0.0.1"), port));
    websocket::stream<tcp::socket> ws(std::move(sock));
    ws.handshake("localhost", "/session");
    ws.text(true);
    for (const auto& m : msgs) ws.write(boost::asio::buffer(m.dump()));
    std::vector<nlohmann::json> out;
    for (int i = 0; i < replies; ++i) {
        beast::flat_buffer buf;
        ws.read(buf);
        out.push_back(nlohmann::json::parse(beast::buffers_to_string(buf.data())));
    }
    ws.close(websocket::close_code::normal);
    return out;
}

}  // namespace

TEST_CASE("server: http endpoints and websocket sessions") {
    auto s = service();
    Server server(*s, ServerConfig{"127.0.0.1", 0});
    server.start();
    const unsigned short port = server.port();
    REQUIRE(port != 0);

    auto h = http_call(port, http::verb::get, "/health");
    CHECK(h.result() == http::status::ok);
    CHECK(nlohmann::json::parse(h.body()).at("checkpoint") == file_hash(checkpoint()));
    CHECK(http_call(port, http::verb::get, "/experts").result() == http::status::ok);
    CHECK(http_call(port, http::verb::get, "/nope").result() == http::status::not_found);
    CHECK(http_call(port, http::verb::get, "/predict").result() == http::status::method_not_allowed);
    auto bad = http_call(port, http::verb::post, "/predict", "[1,2]");
    CHECK(bad.result() == http::status::bad_request);
    CHECK(nlohmann::json::parse(bad.body()).at("type") == "error");

    auto m = load_model(checkpoint());
    for (int i = 0; i < 3; ++i) {
        const auto& t = trials()[static_cast<std::size_t>(i * 11)];
        auto r = http_call(port, http::verb::post, "/predict", trial_to_json(t).dump());
        CHECK(r.result() == http::status::ok);
        CHECK(r.body() == m->predict(t).to_json().dump());
    }

    const std::vector<nlohmann::json> script_a = {start_msg("fixed", 25), motion_msg(150, 0.2), trial_msg(), touch_msg(430, 310, 0.2)};
    const std::vector<nlohmann::json> script_b = {start_msg("handheld", 55), motion_msg(150, 3.0), trial_msg(), touch_msg(430, 310, 0.2)};
    std::vector<nlohmann::json> ra, rb;
    std::thread ta([&] { ra = ws_script(port, script_a, 3); });
    std::thread tb([&] { rb = ws_script(port, script_b, 3); });
    ta.join();
    tb.join();
    REQUIRE(ra.size() == 3);
    CHECK(ra[0].at("type") == "session_started");
    CHECK(ra[1].at("type") == "trial_started");
    CHECK(ra[2].at("type") == "prediction");
    // Same script in-process; only the session-scoped trial id differs.
    auto strip = [](nlohmann::json j) {
        j.erase("trial_id");
        return j.dump();
    };
    CHECK(strip(ra[2]) == strip(run_script(*s, "fixed", 25, 0.2)));
    CHECK(strip(rb[2]) == strip(run_script(*s, "handheld", 55, 3.0)));
    CHECK(ra[2].at("trial_id") != rb[2].at("trial_id"));

    auto err = ws_script(port, {nlohmann::json{{"type", "touch"}}, start_msg("fixed", 30)}, 2);
    CHECK(err[0].at("code") == "no_session");
    CHECK(err[1].at("type") == "session_started");
    server.stop();
}
