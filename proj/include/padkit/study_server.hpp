#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "padkit/study.hpp"

namespace padkit::study {

/// JSON-over-HTTP front end for a StudyStore.
///   POST /api/sessions                 {"observer_id", "seed"?} -> session
///   GET  /api/sessions/{id}/next       -> pair with opaque image URLs, or {"done": true}
///   POST /api/sessions/{id}/responses  {"pair_index", "chosen_side", "confidence"}
///   GET  /api/sessions/{id}/summary    -> observer row once the session is complete
///   GET  /img/{token}                  -> PNG
/// Errors are returned as {"code", "message"}.
class StudyServer {
  public:
    /// Sessions created without an explicit seed use mix_seed(default_seed, ordinal).
    StudyServer(StudyStore& store, Manifest manifest, std::uint64_t default_seed);
    ~StudyServer();
    StudyServer(const StudyServer&) = delete;
    StudyServer& operator=(const StudyServer&) = delete;

    /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    bool listen();
    void stop();
    void wait_until_ready() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace padkit::study
