#include "padkit/io.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace padkit::io {

using nlohmann::json;

std::string_view to_string(DType d) { return d == DType::f64 ? "f64" : "i32"; }

// ------------------------------------------------------------------- tensors

namespace {

fs::path stem_of(const fs::path& path) {
    const auto ext = path.extension();
    if (ext == ".json" || ext == ".bin") return fs::path(path).replace_extension();
    return path;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
void write_le(std::ostream& os, const T* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(T)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            char bytes[sizeof(T)];
            std::memcpy(bytes, &data[i], sizeof(T));
            std::reverse(bytes, bytes + sizeof(T));
            os.write(bytes, sizeof(T));
        }
    }
}

template <typename T>
void read_le(const std::string& blob, T* out, std::size_t n) {
    std::memcpy(out, blob.data(), n * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < n; ++i) {
            char bytes[sizeof(T)];
            std::memcpy(bytes, &out[i], sizeof(T));
            std::reverse(bytes, bytes + sizeof(T));
            std::memcpy(&out[i], bytes, sizeof(T));
        }
    }
}

std::string read_blob(const fs::path& path, const TensorHeader& h) {
    const fs::path blob = blob_path(path);
    std::string bytes = read_file(blob);
    if (bytes.size() != h.byte_count()) {
        throw FormatError("tensor blob '" + blob.string() + "': expected " + std::to_string(h.byte_count()) +
                          " bytes, found " + std::to_string(bytes.size()));
    }
    return bytes;
}

void write_sidecar(const fs::path& path, Eigen::Index h, Eigen::Index w, DType dtype, std::string_view unit) {
    json j;
    j["shape"] = {h, w};
    j["dtype"] = std::string(to_string(dtype));
    j["order"] = "row-major";
    j["unit_tag"] = std::string(unit);
    j["endianness"] = "little";
    std::ofstream out(sidecar_path(path));
    if (!out) throw FormatError("cannot write '" + sidecar_path(path).string() + "'");
    out << j.dump(2) << '\n';
}

} // namespace

fs::path sidecar_path(const fs::path& path) { return fs::path(stem_of(path)) += ".json"; }
fs::path blob_path(const fs::path& path) { return fs::path(stem_of(path)) += ".bin"; }

TensorHeader read_tensor_header(const fs::path& path) {
    const fs::path side = sidecar_path(path);
    json j;
    try {
        j = json::parse(read_file(side));
    } catch (const json::parse_error& e) {
        throw FormatError("sidecar '" + side.string() + "': invalid JSON (" + e.what() + ")");
    }
    auto fail = [&](const std::string& field, const std::string& what) {
        return FormatError("sidecar '" + side.string() + "': field '" + field + "' " + what);
    };
    if (!j.is_object()) throw FormatError("sidecar '" + side.string() + "': expected a JSON object");
    static const std::set<std::string> known{"shape", "dtype", "order", "unit_tag", "endianness"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw fail(key, "is not recognised");
    }
    for (const auto& key : known) {
        if (!j.contains(key)) throw fail(key, "is missing");
    }
    TensorHeader h;
    const json& shape = j["shape"];
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_integer() || !shape[1].is_number_integer() ||
        shape[0].get<long long>() < 1 || shape[1].get<long long>() < 1) {
        throw fail("shape", "must be [height, width] with positive integers");
    }
    h.height = shape[0].get<Eigen::Index>();
    h.width = shape[1].get<Eigen::Index>();
    if (!j["dtype"].is_string()) throw fail("dtype", "must be a string");
    const auto dtype = j["dtype"].get<std::string>();
    if (dtype == "f64") {
        h.dtype = DType::f64;
    } else if (dtype == "i32") {
        h.dtype = DType::i32;
    } else {
        throw fail("dtype", "must be \"f64\" or \"i32\", got \"" + dtype + "\"");
    }
    if (j["order"] != "row-major") throw fail("order", "must be \"row-major\"");
    if (j["endianness"] != "little") throw fail("endianness", "must be \"little\"");
    if (!j["unit_tag"].is_string()) throw fail("unit_tag", "must be a string");
    h.unit_tag = j["unit_tag"].get<std::string>();
    if (h.dtype == DType::i32) {
        if (h.unit_tag != "label") throw fail("unit_tag", "must be \"label\" for i32 tensors");
    } else {
        try {
            (void)unit_tag_from_string(h.unit_tag);
        } catch (const InvalidParameter&) {
            throw fail("unit_tag", "must be raw, suv or normalized for f64 tensors, got \"" + h.unit_tag + "\"");
        }
    }
    return h;
}

ScalarGrid2D read_scalar(const fs::path& path) {
    const TensorHeader h = read_tensor_header(path);
    if (h.dtype != DType::f64) {
        throw TypeError("tensor '" + sidecar_path(path).string() + "' holds i32 labels, expected an f64 image");
    }
    const std::string bytes = read_blob(path, h);
    ScalarGrid2D g(h.height, h.width, unit_tag_from_string(h.unit_tag));
    read_le(bytes, g.values.data(), std::size_t(g.size()));
    return g;
}

LabelGrid2D read_labels(const fs::path& path) {
    const TensorHeader h = read_tensor_header(path);
    if (h.dtype != DType::i32) {
        throw TypeError("tensor '" + sidecar_path(path).string() + "' holds an f64 image, expected i32 labels");
    }
    const std::string bytes = read_blob(path, h);
    LabelGrid2D g(h.height, h.width);
    read_le(bytes, g.labels.data(), std::size_t(g.labels.size()));
    return g;
}

std::variant<ScalarGrid2D, LabelGrid2D> read_tensor(const fs::path& path) {
    if (read_tensor_header(path).dtype == DType::f64) return read_scalar(path);
    return read_labels(path);
}

void write_tensor(const ScalarGrid2D& grid, const fs::path& path) {
    if (grid.size() == 0) throw ShapeError("write_tensor: empty grid");
    write_sidecar(path, grid.height(), grid.width(), DType::f64, to_string(grid.unit));
    std::ofstream out(blob_path(path), std::ios::binary);
    if (!out) throw FormatError("cannot write '" + blob_path(path).string() + "'");
    write_le(out, grid.values.data(), std::size_t(grid.size()));
}

void write_tensor(const LabelGrid2D& grid, const fs::path& path) {
    if (grid.labels.size() == 0) throw ShapeError("write_tensor: empty grid");
    write_sidecar(path, grid.height(), grid.width(), DType::i32, "label");
    std::ofstream out(blob_path(path), std::ios::binary);
    if (!out) throw FormatError("cannot write '" + blob_path(path).string() + "'");
    write_le(out, grid.labels.data(), std::size_t(grid.labels.size()));
}

// ----------------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

} // namespace

CsvTable parse_csv(std::istream& is, const std::string& source) {
    CsvTable t;
    std::string line;
    if (!std::getline(is, line) || line.empty()) throw FormatError(source + ": missing header row");
    if (line.back() == '\r') line.pop_back();
    t.header = split_line(line);
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size()) {
            throw FormatError(source + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return parse_csv(in, path.string());
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv: no column named '" + name + "'");
    return std::size_t(it - header.begin());
}

std::vector<double> CsvTable::numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string& cell = rows[r][c];
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
            throw FormatError("csv: column '" + name + "' row " + std::to_string(r + 1) + " is not a number: '" +
                              cell + "'");
        }
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------- run config

namespace {

/// Reads fields from one JSON object, rejecting any key it was not asked about.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigError("config: unknown key '" + path_ + "." + key + "'");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_[key];
        const std::string where = path_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("config: '" + where + "' must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("config: '" + where + "' must be an integer");
            if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
                throw ConfigError("config: '" + where + "' must be non-negative");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("config: '" + where + "' must be a number");
        } else {
            if (!v.is_string()) throw ConfigError("config: '" + where + "' must be a string");
        }
        out = v.get<T>();
    }

    [[nodiscard]] bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    [[nodiscard]] const json& at(const char* key) const { return j_.at(key); }
    [[nodiscard]] std::string child(const char* key) const { return path_ + "." + key; }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_train(const json& j, const std::string& path, TrainConfig& c) {
    Section s(j, path);
    s.get("iterations", c.iterations);
    s.get("initial_lr", c.initial_lr);
    s.get("freeze_iters", c.freeze_iters);
    s.get("batch_size", c.batch_size);
    s.get("lambda_vb", c.weights.lambda_vb);
    s.get("lambda_l1", c.weights.lambda_l1);
    std::string kind(to_string(c.schedule_kind));
    s.get("schedule", kind);
    try {
        c.schedule_kind = schedule_kind_from_string(kind);
    } catch (const InvalidParameter& e) {
        throw ConfigError(std::string("config: '") + path + ".schedule': " + e.what());
    }
    s.get("timesteps", c.timesteps);
    s.get("ema_decay", c.ema_decay);
    s.get("weight_decay", c.weight_decay);
    s.get("importance_sampling", c.importance_sampling);
    s.get("seed", c.seed);
    s.get("threads", c.threads);
    s.get("base_channels", c.net.base_channels);
    s.get("groups", c.net.groups);
    s.get("time_dim", c.net.time_dim);
    s.finish();
}

json train_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"initial_lr", c.initial_lr},
            {"freeze_iters", c.freeze_iters},
            {"batch_size", c.batch_size},
            {"lambda_vb", c.weights.lambda_vb},
            {"lambda_l1", c.weights.lambda_l1},
            {"schedule", std::string(to_string(c.schedule_kind))},
            {"timesteps", c.timesteps},
            {"ema_decay", c.ema_decay},
            {"weight_decay", c.weight_decay},
            {"importance_sampling", c.importance_sampling},
            {"seed", c.seed},
            {"threads", c.threads},
            {"base_channels", c.net.base_channels},
            {"groups", c.net.groups},
            {"time_dim", c.net.time_dim}};
}

} // namespace

void RunConfig::validate() const {
    try {
        normalization.validate();
    } catch (const InvalidParameter& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (phantoms.count < 1) throw ConfigError("config: phantoms.count must be >= 1");
    if (phantoms.grid_size < 4 || phantoms.grid_size % 4 != 0) {
        throw ConfigError("config: phantoms.grid_size must be a positive multiple of 4");
    }
    if (phantoms.organ_count < 1) throw ConfigError("config: phantoms.organ_count must be >= 1");
    base.validate();
    super_res.validate();
    if (eval.glcm_bins < 2) throw ConfigError("config: eval.glcm_bins must be >= 2");
    if (eval.bootstrap_resamples < 1) throw ConfigError("config: eval.bootstrap_resamples must be >= 1");
    if (!(eval.alpha > 0.0 && eval.alpha < 1.0)) throw ConfigError("config: eval.alpha must be in (0, 1)");
    if (!(eval.threshold_fraction > 0.0 && eval.threshold_fraction < 1.0)) {
        throw ConfigError("config: eval.threshold_fraction must be in (0, 1)");
    }
}

RunConfig default_run_config() {
    RunConfig c;
    for (TrainConfig* t : {&c.base, &c.super_res}) {
        t->iterations = 3000;
        t->freeze_iters = 300;
        t->batch_size = 4;
        t->initial_lr = 1e-3;
        t->timesteps = 200;
        t->ema_decay = 0.995;
    }
    c.base.seed = 7;
    c.super_res.seed = 8;
    return c;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON (") + e.what() + ")");
    }
    RunConfig c = default_run_config();
    {
        Section root(j, "config");
        if (root.has("normalization")) {
            Section s(root.at("normalization"), "config.normalization");
            s.get("c", c.normalization.c);
            s.get("lo", c.normalization.lo);
            s.get("hi", c.normalization.hi);
            s.finish();
        }
        if (root.has("phantoms")) {
            Section s(root.at("phantoms"), "config.phantoms");
            s.get("count", c.phantoms.count);
            s.get("grid_size", c.phantoms.grid_size);
            s.get("organ_count", c.phantoms.organ_count);
            s.get("seed", c.phantoms.seed);
            s.finish();
        }
        if (root.has("train")) {
            Section s(root.at("train"), "config.train");
            if (s.has("base")) read_train(s.at("base"), s.child("base"), c.base);
            if (s.has("super")) read_train(s.at("super"), s.child("super"), c.super_res);
            s.finish();
        }
        if (root.has("generate")) {
            Section s(root.at("generate"), "config.generate");
            s.get("seed", c.generate_seed);
            s.finish();
        }
        if (root.has("eval")) {
            Section s(root.at("eval"), "config.eval");
            s.get("glcm_bins", c.eval.glcm_bins);
            s.get("bootstrap_resamples", c.eval.bootstrap_resamples);
            s.get("bootstrap_seed", c.eval.bootstrap_seed);
            s.get("alpha", c.eval.alpha);
            s.get("threshold_fraction", c.eval.threshold_fraction);
            s.finish();
        }
        root.finish();
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
    json j;
    j["normalization"] = {{"c", c.normalization.c}, {"lo", c.normalization.lo}, {"hi", c.normalization.hi}};
    j["phantoms"] = {{"count", c.phantoms.count},
                     {"grid_size", c.phantoms.grid_size},
                     {"organ_count", c.phantoms.organ_count},
                     {"seed", c.phantoms.seed}};
    j["train"] = {{"base", train_json(c.base)}, {"super", train_json(c.super_res)}};
    j["generate"] = {{"seed", c.generate_seed}};
    j["eval"] = {{"glcm_bins", c.eval.glcm_bins},
                 {"bootstrap_resamples", c.eval.bootstrap_resamples},
                 {"bootstrap_seed", c.eval.bootstrap_seed},
                 {"alpha", c.eval.alpha},
                 {"threshold_fraction", c.eval.threshold_fraction}};
    return j.dump(2) + "\n";
}

} // namespace padkit::io
