#include "padkit/study.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "padkit/io.hpp"
#include "padkit/random.hpp"
#include "padkit/stats.hpp"

namespace padkit::study {

using nlohmann::json;

std::string_view to_string(Side s) { return s == Side::left ? "left" : "right"; }

Side side_from_string(std::string_view name) {
    if (name == "left") return Side::left;
    if (name == "right") return Side::right;
    throw InvalidParameter("chosen_side must be \"left\" or \"right\", got \"" + std::string(name) + "\"");
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("manifest '" + path.string() + "': invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("pairs") || !j["pairs"].is_array() || j.size() != 1) {
        throw FormatError("manifest '" + path.string() + "': expected {\"pairs\": [...]}");
    }
    const fs::path base = path.parent_path();
    Manifest m;
    for (const auto& p : j["pairs"]) {
        if (!p.is_object() || p.size() != 2 || !p.contains("target") || !p.contains("synthetic") ||
            !p["target"].is_string() || !p["synthetic"].is_string()) {
            throw FormatError("manifest '" + path.string() + "': each pair needs string fields target and synthetic");
        }
        auto resolve = [&](const std::string& s) {
            const fs::path q(s);
            return q.is_absolute() ? q : base / q;
        };
        m.pairs.push_back({resolve(p["target"].get<std::string>()), resolve(p["synthetic"].get<std::string>())});
    }
    return m;
}

bool synthetic_on_left(std::uint64_t session_seed, std::size_t pair_index) {
    return (mix_seed(mix_seed(session_seed, 0x504c4143ULL), pair_index) >> 63) != 0;
}

// ------------------------------------------------------------------- summary

namespace {

double median_of(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? double(v[n / 2]) : 0.5 * double(v[n / 2 - 1] + v[n / 2]);
}

std::string format_plain(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

} // namespace

SummaryRow summarize_responses(const std::string& label, const std::vector<ResponseRecord>& responses) {
    if (responses.empty()) throw InsufficientData("summary of '" + label + "' needs at least one response");
    SummaryRow row;
    row.observer = label;
    row.answered = responses.size();
    std::vector<int> conf;
    conf.reserve(responses.size());
    for (const auto& r : responses) {
        row.correct += r.correct ? 1 : 0;
        conf.push_back(r.confidence);
    }
    row.accuracy = 100.0 * double(row.correct) / double(row.answered);
    row.accuracy_display = std::lround(row.accuracy);
    row.median_confidence = median_of(conf);
    return row;
}

Summary summarize(const std::vector<StudySession>& sessions) {
    std::map<std::string, std::vector<ResponseRecord>> by_observer;
    std::vector<ResponseRecord> all;
    for (const auto& s : sessions) {
        if (s.responses.empty()) continue;
        auto& dst = by_observer[s.observer_id];
        dst.insert(dst.end(), s.responses.begin(), s.responses.end());
        all.insert(all.end(), s.responses.begin(), s.responses.end());
    }
    Summary out;
    for (const auto& [observer, records] : by_observer) out.observers.push_back(summarize_responses(observer, records));
    out.overall = summarize_responses("Summary", all);
    return out;
}

void write_summary_csv(std::ostream& os, const Summary& summary) {
    os << "observer,accuracy,median_confidence,answered,correct,accuracy_raw\n";
    auto row = [&](const SummaryRow& r) {
        os << r.observer << ',' << r.accuracy_display << "%," << format_plain(r.median_confidence) << ',' << r.answered
           << ',' << r.correct << ',' << format_plain(r.accuracy) << '\n';
    };
    for (const auto& r : summary.observers) row(r);
    row(summary.overall);
}

// ----------------------------------------------------------------- rendering

namespace {

void png_append(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void png_flush_noop(png_structp) {}

ScalarGrid2D as_normalized(const ScalarGrid2D& g) {
    if (g.unit == UnitTag::normalized) return g;
    if (g.unit == UnitTag::suv) return arcsinh_normalize(g, NormalizationParams{});
    throw InvalidParameter("study images must be SUV or normalized");
}

} // namespace

std::string render_png(const ScalarGrid2D& image, double window_hi) {
    const auto h = static_cast<png_uint_32>(image.height());
    const auto w = static_cast<png_uint_32>(image.width());
    if (h == 0 || w == 0) throw ShapeError("render_png: empty image");
    std::vector<png_byte> pixels(std::size_t(h) * w);
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        const double v = image.values.data()[i];
        const double u = window_hi > 0.0 ? std::clamp(v / window_hi, 0.0, 1.0) : (v > 0.0 ? 1.0 : 0.0);
        pixels[std::size_t(i)] = static_cast<png_byte>(std::lround(255.0 * (1.0 - u)));
    }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: cannot create info struct");
    }
    std::string out;
    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + std::size_t(r) * w;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encoding failed");
    }
    png_set_write_fn(png, &out, png_append, png_flush_noop);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

double pair_window(const ScalarGrid2D& a, const ScalarGrid2D& b) {
    std::vector<double> pooled(a.values.data(), a.values.data() + a.size());
    pooled.insert(pooled.end(), b.values.data(), b.values.data() + b.size());
    return stats::quantile(pooled, 0.995);
}

// --------------------------------------------------------------------- store

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json session_json(const StudySession& s, std::int64_t created_ms) {
    json pairs = json::array();
    for (const auto& p : s.pairs) pairs.push_back({{"target", p.target.string()}, {"synthetic", p.synthetic.string()}});
    return {{"type", "session"},       {"session_id", s.session_id}, {"observer_id", s.observer_id},
            {"seed", s.seed},          {"created_ms", created_ms},  {"pairs", pairs}};
}

json response_json(const ResponseRecord& r) {
    return {{"type", "response"},
            {"session_id", r.session_id},
            {"pair_index", r.pair_index},
            {"chosen_side", std::string(to_string(r.chosen_side))},
            {"correct", r.correct},
            {"confidence", r.confidence},
            {"timestamp_ms", r.timestamp_ms}};
}

void check_confidence(int confidence) {
    if (confidence < 1 || confidence > 5) {
        throw InvalidParameter("confidence must be an integer in 1..5, got " + std::to_string(confidence));
    }
}

/// Applies one response to a session, enforcing order and uniqueness.
void apply_response(StudySession& s, const ResponseRecord& r) {
    check_confidence(r.confidence);
    if (r.pair_index >= s.pairs.size()) {
        throw InvalidParameter("pair_index " + std::to_string(r.pair_index) + " out of range for " +
                               std::to_string(s.pairs.size()) + " pairs");
    }
    if (r.pair_index < s.cursor()) {
        throw ConflictError("pair " + std::to_string(r.pair_index) + " already has a response");
    }
    if (r.pair_index > s.cursor()) {
        throw SequenceError("expected a response for pair " + std::to_string(s.cursor()) + ", got " +
                            std::to_string(r.pair_index));
    }
    s.responses.push_back(r);
}

struct LoadedLog {
    StudySession session;
    bool rewrite = false;
    std::vector<std::string> lines;
};

LoadedLog load_log(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("cannot open study log '" + file.string() + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    LoadedLog out;
    auto parse = [&](std::size_t k) -> std::optional<json> {
        try {
            return json::parse(lines[k]);
        } catch (const json::parse_error&) {
            // A torn final line is the only tolerated damage.
            if (k + 1 == lines.size()) return std::nullopt;
            throw FormatError("study log '" + file.string() + "': line " + std::to_string(k + 1) + " is not JSON");
        }
    };
    if (lines.empty()) throw FormatError("study log '" + file.string() + "' is empty");
    const auto head = parse(0);
    if (!head || head->value("type", "") != "session") {
        throw FormatError("study log '" + file.string() + "': first line must be the session record");
    }
    StudySession& s = out.session;
    try {
        s.session_id = head->at("session_id").get<std::string>();
        s.observer_id = head->at("observer_id").get<std::string>();
        s.seed = head->at("seed").get<std::uint64_t>();
        for (const auto& p : head->at("pairs")) {
            s.pairs.push_back({p.at("target").get<std::string>(), p.at("synthetic").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw FormatError("study log '" + file.string() + "': bad session record (" + e.what() + ")");
    }
    for (std::size_t i = 0; i < s.pairs.size(); ++i) s.synthetic_left.push_back(synthetic_on_left(s.seed, i));
    out.lines.push_back(lines[0]);
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto rec = parse(k);
        if (!rec) {
            out.rewrite = true;
            break;
        }
        ResponseRecord r;
        try {
            if (rec->at("type") != "response") throw FormatError("unexpected record type");
            r.session_id = rec->at("session_id").get<std::string>();
            r.pair_index = rec->at("pair_index").get<std::size_t>();
            r.chosen_side = side_from_string(rec->at("chosen_side").get<std::string>());
            r.confidence = rec->at("confidence").get<int>();
            r.timestamp_ms = rec->at("timestamp_ms").get<std::int64_t>();
        } catch (const std::exception& e) {
            throw FormatError("study log '" + file.string() + "': line " + std::to_string(k + 1) + ": " + e.what());
        }
        if (r.session_id != s.session_id) {
            throw FormatError("study log '" + file.string() + "': line " + std::to_string(k + 1) +
                              " belongs to another session");
        }
        // Correctness is recomputed from the placement bit rather than trusted from the log.
        r.correct = (r.chosen_side == Side::left) == s.synthetic_left[r.pair_index < s.pairs.size() ? r.pair_index : 0];
        apply_response(s, r);
        out.lines.push_back(lines[k]);
    }
    return out;
}

} // namespace

std::vector<StudySession> replay_logs(const fs::path& dir) {
    std::vector<StudySession> out;
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(load_log(f).session);
    return out;
}

struct StudyStore::Entry {
    mutable std::mutex mu;
    StudySession session;
    std::ofstream log;
    std::optional<NextPair> pending; // tokens handed out for the current cursor
    mutable std::map<std::size_t, std::pair<std::string, std::string>> png_cache;
};

StudyStore::StudyStore(fs::path log_dir, std::uint64_t token_seed) : dir_(std::move(log_dir)), token_seed_(token_seed) {
    fs::create_directories(dir_);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        LoadedLog loaded = load_log(f);
        if (loaded.rewrite) {
            std::ofstream out(f, std::ios::trunc);
            for (const auto& l : loaded.lines) out << l << '\n';
        }
        auto entry = std::make_shared<Entry>();
        entry->session = std::move(loaded.session);
        entry->log.open(f, std::ios::app);
        sessions_[entry->session.session_id] = entry;
    }
    session_counter_ = sessions_.size();
}

StudyStore::~StudyStore() = default;

std::shared_ptr<StudyStore::Entry> StudyStore::find(const std::string& session_id) const {
    std::shared_lock lock(mu_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
    return it->second;
}

std::string StudyStore::new_token() {
    ++token_counter_;
    return hex64(mix_seed(token_seed_, 2 * token_counter_)) + hex64(mix_seed(token_seed_, 2 * token_counter_ + 1));
}

StudySession StudyStore::create_session(const Manifest& manifest, const std::string& observer_id,
                                        std::uint64_t seed) {
    if (manifest.pairs.empty()) throw ConfigError("create_session: manifest has no pairs");
    if (observer_id.empty()) throw InvalidParameter("create_session: observer_id must not be empty");
    std::vector<std::string> missing;
    for (const auto& p : manifest.pairs) {
        for (const auto& path : {p.target, p.synthetic}) {
            if (!fs::exists(io::sidecar_path(path)) || !fs::exists(io::blob_path(path))) missing.push_back(path.string());
        }
    }
    if (!missing.empty()) {
        std::string msg = "create_session: missing image files:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    auto entry = std::make_shared<Entry>();
    StudySession& s = entry->session;
    s.observer_id = observer_id;
    s.seed = seed;
    s.pairs = manifest.pairs;
    for (std::size_t i = 0; i < s.pairs.size(); ++i) s.synthetic_left.push_back(synthetic_on_left(seed, i));

    std::unique_lock lock(mu_);
    do {
        s.session_id = hex64(mix_seed(token_seed_ ^ 0x53455353ULL, ++session_counter_));
    } while (sessions_.contains(s.session_id));
    const fs::path file = dir_ / (s.session_id + ".jsonl");
    entry->log.open(file, std::ios::app);
    if (!entry->log) throw std::runtime_error("cannot open study log '" + file.string() + "'");
    entry->log << session_json(s, now_ms()).dump() << '\n';
    entry->log.flush();
    sessions_[s.session_id] = entry;
    return s;
}

NextPair StudyStore::next_pair(const std::string& session_id) {
    const auto entry = find(session_id);
    std::lock_guard guard(entry->mu);
    const StudySession& s = entry->session;
    if (s.completed()) return {true, s.pairs.size(), s.pairs.size(), {}, {}};
    if (entry->pending && entry->pending->pair_index == s.cursor()) return *entry->pending;
    NextPair next{false, s.cursor(), s.pairs.size(), {}, {}};
    std::unique_lock lock(mu_);
    next.left_token = new_token();
    next.right_token = new_token();
    tokens_[next.left_token] = {session_id, next.pair_index, Side::left};
    tokens_[next.right_token] = {session_id, next.pair_index, Side::right};
    entry->pending = next;
    return next;
}

ResponseRecord StudyStore::record_response(const std::string& session_id, std::size_t pair_index, Side chosen,
                                           int confidence) {
    const auto entry = find(session_id);
    std::lock_guard guard(entry->mu);
    StudySession& s = entry->session;
    ResponseRecord r;
    r.session_id = session_id;
    r.pair_index = pair_index;
    r.chosen_side = chosen;
    r.confidence = confidence;
    r.timestamp_ms = now_ms();
    r.correct = pair_index < s.pairs.size() && (chosen == Side::left) == s.synthetic_left[pair_index];
    apply_response(s, r);
    entry->log << response_json(r).dump() << '\n';
    entry->log.flush();
    if (!entry->log) throw std::runtime_error("failed to append to the study log of session " + session_id);
    return r;
}

StudySession StudyStore::session(const std::string& session_id) const {
    const auto entry = find(session_id);
    std::lock_guard guard(entry->mu);
    return entry->session;
}

bool StudyStore::completed(const std::string& session_id) const {
    const auto entry = find(session_id);
    std::lock_guard guard(entry->mu);
    return entry->session.completed();
}

std::vector<StudySession> StudyStore::sessions() const {
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::shared_lock lock(mu_);
        for (const auto& [id, e] : sessions_) entries.push_back(e);
    }
    std::vector<StudySession> out;
    for (const auto& e : entries) {
        std::lock_guard guard(e->mu);
        out.push_back(e->session);
    }
    return out;
}

std::string StudyStore::image(const std::string& token) const {
    TokenTarget target;
    {
        std::shared_lock lock(mu_);
        const auto it = tokens_.find(token);
        if (it == tokens_.end()) throw NotFoundError("unknown image token");
        target = it->second;
    }
    const auto entry = find(target.session_id);
    std::lock_guard guard(entry->mu);
    auto cached = entry->png_cache.find(target.pair_index);
    if (cached == entry->png_cache.end()) {
        const PairPaths& p = entry->session.pairs[target.pair_index];
        const ScalarGrid2D tgt = as_normalized(io::read_scalar(p.target));
        const ScalarGrid2D syn = as_normalized(io::read_scalar(p.synthetic));
        require_same_shape(tgt.values, syn.values, "study pair");
        const double hi = pair_window(tgt, syn);
        const bool syn_left = entry->session.synthetic_left[target.pair_index];
        std::string left = render_png(syn_left ? syn : tgt, hi);
        std::string right = render_png(syn_left ? tgt : syn, hi);
        cached = entry->png_cache.emplace(target.pair_index, std::make_pair(std::move(left), std::move(right))).first;
    }
    return target.side == Side::left ? cached->second.first : cached->second.second;
}

} // namespace padkit::study
