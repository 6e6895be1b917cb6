#include "padkit/study_server.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>

#include "padkit/random.hpp"

namespace padkit::study {

using nlohmann::json;

struct StudyServer::Impl {
    StudyStore& store;
    Manifest manifest;
    std::uint64_t default_seed;
    std::atomic<std::uint64_t> created{0};
    httplib::Server http;

    Impl(StudyStore& s, Manifest m, std::uint64_t seed) : store(s), manifest(std::move(m)), default_seed(seed) {}

    static void send_json(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
        send_json(res, status, {{"code", code}, {"message", message}});
    }

    /// Maps library errors onto HTTP statuses.
    template <typename Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const NotFoundError& e) {
            send_error(res, 404, "not_found", e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, "conflict", e.what());
        } catch (const SequenceError& e) {
            send_error(res, 422, "sequence_error", e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "bad_request", std::string("malformed JSON body: ") + e.what());
        } catch (const ValidationError& e) {
            send_error(res, 400, "validation_error", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal_error", e.what());
        }
    }

    static json parse_body(const httplib::Request& req, std::initializer_list<const char*> allowed) {
        json body = json::parse(req.body.empty() ? "{}" : req.body);
        if (!body.is_object()) throw InvalidParameter("request body must be a JSON object");
        for (const auto& [key, value] : body.items()) {
            if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
                throw InvalidParameter("unknown field '" + key + "'");
            }
        }
        return body;
    }

    void routes() {
        http.set_tcp_nodelay(true);
        http.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req, {"observer_id", "seed"});
                if (!body.contains("observer_id") || !body["observer_id"].is_string()) {
                    throw InvalidParameter("observer_id (string) is required");
                }
                std::uint64_t seed = mix_seed(default_seed, created.fetch_add(1));
                if (body.contains("seed")) {
                    if (!body["seed"].is_number_unsigned()) throw InvalidParameter("seed must be a non-negative integer");
                    seed = body["seed"].get<std::uint64_t>();
                }
                const StudySession s = store.create_session(manifest, body["observer_id"].get<std::string>(), seed);
                send_json(res, 201,
                          {{"session_id", s.session_id},
                           {"observer_id", s.observer_id},
                           {"pair_count", s.pairs.size()},
                           {"cursor", s.cursor()}});
            });
        });
        http.Get(R"(/api/sessions/([0-9a-f]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const NextPair n = store.next_pair(req.matches[1]);
                if (n.done) {
                    send_json(res, 200, {{"done", true}, {"pair_count", n.pair_count}});
                    return;
                }
                send_json(res, 200,
                          {{"done", false},
                           {"pair_index", n.pair_index},
                           {"pair_count", n.pair_count},
                           {"left_image_url", "/img/" + n.left_token},
                           {"right_image_url", "/img/" + n.right_token}});
            });
        });
        http.Post(R"(/api/sessions/([0-9a-f]+)/responses)", [this](const httplib::Request& req,
                                                                    httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req, {"pair_index", "chosen_side", "confidence"});
                if (!body.contains("pair_index") || !body["pair_index"].is_number_unsigned()) {
                    throw InvalidParameter("pair_index (non-negative integer) is required");
                }
                if (!body.contains("chosen_side") || !body["chosen_side"].is_string()) {
                    throw InvalidParameter("chosen_side (\"left\" or \"right\") is required");
                }
                if (!body.contains("confidence") || !body["confidence"].is_number_integer()) {
                    throw InvalidParameter("confidence (integer 1..5) is required");
                }
                const auto side = side_from_string(body["chosen_side"].get<std::string>());
                const auto r = store.record_response(req.matches[1], body["pair_index"].get<std::size_t>(), side,
                                                     body["confidence"].get<int>());
                send_json(res, 201,
                          {{"pair_index", r.pair_index}, {"recorded", true}, {"completed", store.completed(r.session_id)}});
            });
        });
        http.Get(R"(/api/sessions/([0-9a-f]+)/summary)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const StudySession s = store.session(req.matches[1]);
                if (!s.completed()) {
                    send_error(res, 409, "incomplete", "summary is available once every pair has a response");
                    return;
                }
                const SummaryRow row = summarize_responses(s.observer_id, s.responses);
                send_json(res, 200,
                          {{"session_id", s.session_id},
                           {"observer_id", row.observer},
                           {"answered", row.answered},
                           {"correct", row.correct},
                           {"accuracy", row.accuracy},
                           {"accuracy_display", row.accuracy_display},
                           {"median_confidence", row.median_confidence}});
            });
        });
        http.Get(R"(/img/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                res.set_content(store.image(req.matches[1]), "image/png");
                res.set_header("Cache-Control", "no-store");
            });
        });
    }
};

StudyServer::StudyServer(StudyStore& store, Manifest manifest, std::uint64_t default_seed)
    : impl_(std::make_unique<Impl>(store, std::move(manifest), default_seed)) {
    if (impl_->manifest.pairs.empty()) throw ConfigError("study server: manifest has no pairs");
    impl_->routes();
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->http.bind_to_any_port(host);
    return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool StudyServer::listen() { return impl_->http.listen_after_bind(); }

void StudyServer::stop() { impl_->http.stop(); }

void StudyServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

} // namespace padkit::study
