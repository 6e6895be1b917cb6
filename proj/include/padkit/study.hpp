#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "padkit/imagekit.hpp"

namespace padkit::study {

namespace fs = std::filesystem;

enum class Side { left, right };

std::string_view to_string(Side s);
Side side_from_string(std::string_view name);

struct PairPaths {
    fs::path target;
    fs::path synthetic;
};

/// JSON manifest: {"pairs": [{"target": <tensor>, "synthetic": <tensor>}, ...]}; relative paths
/// resolve against the manifest's directory.
struct Manifest {
    std::vector<PairPaths> pairs;
};

Manifest load_manifest(const fs::path& path);

/// Placement bit for one pair: true when the synthetic image is shown on the left.
bool synthetic_on_left(std::uint64_t session_seed, std::size_t pair_index);

struct ResponseRecord {
    std::string session_id;
    std::size_t pair_index = 0;
    Side chosen_side = Side::left;
    bool correct = false;
    int confidence = 0;
    std::int64_t timestamp_ms = 0;
};

struct StudySession {
    std::string session_id;
    std::string observer_id;
    std::uint64_t seed = 0;
    std::vector<PairPaths> pairs;
    std::vector<bool> synthetic_left;
    std::vector<ResponseRecord> responses;

    [[nodiscard]] std::size_t cursor() const { return responses.size(); }
    [[nodiscard]] bool completed() const { return responses.size() == pairs.size(); }
};

// ------------------------------------------------------------------- summary

struct SummaryRow {
    std::string observer;
    std::size_t answered = 0;
    std::size_t correct = 0;
    double accuracy = 0.0; // percent, unrounded
    long accuracy_display = 0;
    double median_confidence = 0.0;
};

struct Summary {
    std::vector<SummaryRow> observers; // sorted by observer id
    SummaryRow overall;
};

SummaryRow summarize_responses(const std::string& label, const std::vector<ResponseRecord>& responses);
/// Pools sessions per observer; sessions without responses are skipped.
Summary summarize(const std::vector<StudySession>& sessions);
/// Columns: observer,accuracy,median_confidence,answered,correct,accuracy_raw
void write_summary_csv(std::ostream& os, const Summary& summary);

// ----------------------------------------------------------------- rendering

/// 8-bit grayscale PNG, inverted so that high values are dark, linear window [0, window_hi].
std::string render_png(const ScalarGrid2D& image, double window_hi);
/// Upper window for a pair: 99.5th percentile of the pooled normalized values.
double pair_window(const ScalarGrid2D& a, const ScalarGrid2D& b);

// --------------------------------------------------------------------- store

struct NextPair {
    bool done = false;
    std::size_t pair_index = 0;
    std::size_t pair_count = 0;
    std::string left_token;
    std::string right_token;
};

/// Sessions persisted as one append-only JSON-lines log per session under `log_dir`.
/// Existing logs are replayed on construction.
class StudyStore {
  public:
    StudyStore(fs::path log_dir, std::uint64_t token_seed);
    ~StudyStore();
    StudyStore(const StudyStore&) = delete;
    StudyStore& operator=(const StudyStore&) = delete;

    StudySession create_session(const Manifest& manifest, const std::string& observer_id, std::uint64_t seed);
    NextPair next_pair(const std::string& session_id);
    ResponseRecord record_response(const std::string& session_id, std::size_t pair_index, Side chosen,
                                   int confidence);
    [[nodiscard]] StudySession session(const std::string& session_id) const;
    [[nodiscard]] bool completed(const std::string& session_id) const;
    [[nodiscard]] std::vector<StudySession> sessions() const;
    /// PNG bytes for an image token handed out by next_pair.
    [[nodiscard]] std::string image(const std::string& token) const;

    [[nodiscard]] const fs::path& log_dir() const { return dir_; }

  private:
    struct Entry;
    struct TokenTarget {
        std::string session_id;
        std::size_t pair_index = 0;
        Side side = Side::left;
    };

    std::shared_ptr<Entry> find(const std::string& session_id) const;
    std::string new_token();

    fs::path dir_;
    std::uint64_t token_seed_;
    std::uint64_t token_counter_ = 0;
    std::uint64_t session_counter_ = 0;
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::map<std::string, TokenTarget> tokens_;
};

/// Rebuilds sessions from the logs in `dir` (sorted by session id).
std::vector<StudySession> replay_logs(const fs::path& dir);

} // namespace padkit::study
