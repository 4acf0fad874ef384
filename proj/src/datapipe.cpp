#include "foveacast/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace foveacast {

namespace {

constexpr const char* kTraceColumns[] = {"timestamp_us", "gaze_x", "gaze_y", "confidence",
                                         "qw",           "qx",     "qy",     "qz",
                                         "scene_id",     "session_id"};
constexpr int kTraceColumnCount = 10;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

double parse_real(const std::string& field, int line_no, const char* column) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || field.empty())
        throw ParseError(line_no, std::string(column) + " '" + field + "'");
    if (!std::isfinite(v)) throw ParseError(line_no, std::string(column) + " not finite");
    return v;
}

int64_t parse_int(const std::string& field, int line_no, const char* column) {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty())
        throw ParseError(line_no, std::string(column) + " '" + field + "'");
    return v;
}

// Gap-split shared across record kinds; Ts extracts the timestamp.
template <typename Row, typename Ts>
std::vector<std::vector<Row>> split_on_gaps_impl(const std::vector<Row>& rows, double gap_factor,
                                                 Ts ts) {
    std::vector<std::vector<Row>> runs;
    if (rows.empty()) return runs;
    if (rows.size() == 1 || gap_factor <= 0.0) {
        runs.push_back(rows);
        return runs;
    }
    std::vector<int64_t> deltas;
    deltas.reserve(rows.size() - 1);
    for (size_t i = 1; i < rows.size(); ++i) deltas.push_back(ts(rows[i]) - ts(rows[i - 1]));
    std::vector<int64_t> sorted = deltas;
    std::sort(sorted.begin(), sorted.end());
    // Median of the inter-sample intervals (upper of the two middles for even
    // counts, which only tightens the threshold).
    const double median = static_cast<double>(sorted[sorted.size() / 2]);
    const double limit = gap_factor * median;
    runs.emplace_back();
    runs.back().push_back(rows[0]);
    for (size_t i = 1; i < rows.size(); ++i) {
        if (static_cast<double>(deltas[i - 1]) > limit) runs.emplace_back();
        runs.back().push_back(rows[i]);
    }
    return runs;
}

}  // namespace

std::vector<RawSession> ingest_traces_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw MissingColumn("empty trace file: " + origin);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header = split_csv_line(line);
    int col[kTraceColumnCount];
    for (int i = 0; i < kTraceColumnCount; ++i) {
        auto it = std::find(header.begin(), header.end(), kTraceColumns[i]);
        if (it == header.end())
            throw MissingColumn(std::string(kTraceColumns[i]) + " in " + origin);
        col[i] = static_cast<int>(it - header.begin());
    }
    const size_t ncols = header.size();

    std::vector<RawSession> sessions;
    std::map<std::string, size_t> by_id;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != ncols)
            throw ParseError(line_no, "expected " + std::to_string(ncols) + " fields, got " +
                                          std::to_string(f.size()));
        RawTraceRecord r;
        r.timestamp_us = parse_int(f[static_cast<size_t>(col[0])], line_no, "timestamp_us");
        r.gaze_x = parse_real(f[static_cast<size_t>(col[1])], line_no, "gaze_x");
        r.gaze_y = parse_real(f[static_cast<size_t>(col[2])], line_no, "gaze_y");
        r.confidence = parse_real(f[static_cast<size_t>(col[3])], line_no, "confidence");
        if (r.confidence < 0.0 || r.confidence > 1.0)
            throw ParseError(line_no, "confidence outside [0,1]");
        r.quat.w = parse_real(f[static_cast<size_t>(col[4])], line_no, "qw");
        r.quat.x = parse_real(f[static_cast<size_t>(col[5])], line_no, "qx");
        r.quat.y = parse_real(f[static_cast<size_t>(col[6])], line_no, "qy");
        r.quat.z = parse_real(f[static_cast<size_t>(col[7])], line_no, "qz");
        r.scene_id = f[static_cast<size_t>(col[8])];
        r.session_id = f[static_cast<size_t>(col[9])];

        auto [it, inserted] = by_id.try_emplace(r.session_id, sessions.size());
        if (inserted) {
            sessions.push_back(RawSession{r.scene_id, r.session_id, {}});
        } else if (sessions[it->second].scene_id != r.scene_id) {
            throw ParseError(line_no, "session " + r.session_id + " spans scenes " +
                                          sessions[it->second].scene_id + " and " + r.scene_id);
        }
        sessions[it->second].records.push_back(std::move(r));
    }

    for (RawSession& s : sessions) {
        std::stable_sort(s.records.begin(), s.records.end(),
                         [](const RawTraceRecord& a, const RawTraceRecord& b) {
                             return a.timestamp_us < b.timestamp_us;
                         });
        // Duplicate timestamps collapse to the last record in file order.
        std::vector<RawTraceRecord> dedup;
        dedup.reserve(s.records.size());
        for (RawTraceRecord& r : s.records) {
            if (!dedup.empty() && dedup.back().timestamp_us == r.timestamp_us)
                dedup.back() = std::move(r);
            else
                dedup.push_back(std::move(r));
        }
        s.records = std::move(dedup);
        for (size_t i = 1; i < s.records.size(); ++i)
            if (s.records[i].timestamp_us <= s.records[i - 1].timestamp_us)
                throw NonMonotonicTimestamp(s.session_id);
    }
    return sessions;
}

std::vector<RawSession> ingest_traces(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trace file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return ingest_traces_text(buf.str(), path);
}

RawSession filter_confidence(const RawSession& session, double threshold, int* dropped) {
    RawSession out{session.scene_id, session.session_id, {}};
    out.records.reserve(session.records.size());
    int removed = 0;
    for (const RawTraceRecord& r : session.records) {
        if (r.confidence > threshold)
            out.records.push_back(r);
        else
            ++removed;
    }
    if (dropped) *dropped = removed;
    return out;
}

std::vector<std::vector<RawTraceRecord>> split_on_gaps(const std::vector<RawTraceRecord>& records,
                                                       double gap_factor) {
    return split_on_gaps_impl(records, gap_factor,
                              [](const RawTraceRecord& r) { return r.timestamp_us; });
}

std::vector<std::vector<AlignedFrame>> split_on_gaps(const std::vector<AlignedFrame>& frames,
                                                     double gap_factor) {
    return split_on_gaps_impl(frames, gap_factor, [](const AlignedFrame& f) { return f.t_us; });
}

std::vector<AlignedFrame> align_streams(const std::vector<GazeSample>& gaze,
                                        const std::vector<HeadSample>& head,
                                        const GazeBounds& bounds, AlignStats* stats) {
    if (gaze.empty()) throw EmptyInput("align_streams: gaze stream");
    if (head.empty()) throw EmptyInput("align_streams: head stream");
    const int64_t h_first = head.front().t_us, h_last = head.back().t_us;
    if (gaze.back().t_us < h_first || gaze.front().t_us > h_last)
        throw NoOverlap("gaze [" + std::to_string(gaze.front().t_us) + "," +
                        std::to_string(gaze.back().t_us) + "] vs head [" +
                        std::to_string(h_first) + "," + std::to_string(h_last) + "]");

    AlignStats local;
    std::vector<AlignedFrame> frames;
    frames.reserve(gaze.size());
    size_t hi = 0;  // first head sample with t >= gaze t (advances monotonically)
    for (const GazeSample& g : gaze) {
        if (g.t_us < h_first) {
            ++local.dropped_before;
            continue;
        }
        if (g.t_us > h_last) {
            ++local.dropped_after;
            continue;
        }
        while (hi < head.size() && head[hi].t_us < g.t_us) ++hi;
        AlignedFrame f;
        f.t_us = g.t_us;
        if (head[hi].t_us == g.t_us) {
            f.head = quat_normalize(head[hi].q);
        } else {
            const HeadSample& h0 = head[hi - 1];
            const HeadSample& h1 = head[hi];
            const double u = static_cast<double>(g.t_us - h0.t_us) /
                             static_cast<double>(h1.t_us - h0.t_us);
            f.head = slerp(quat_normalize(h0.q), quat_normalize(h1.q), u);
        }
        f.gaze = normalize_gaze(g.x, g.y, bounds);
        if (f.gaze.clamped) ++local.clamped;
        frames.push_back(std::move(f));
    }
    if (stats) *stats = local;
    return frames;
}

int64_t window_count(int64_t length, int n, int k, int stride) {
    const int64_t span = length - n - k;
    if (span < 0) return 0;
    return span / stride + 1;
}

std::vector<WindowSample> make_windows(const std::vector<AlignedFrame>& frames, int n, int k,
                                       int stride) {
    if (n < 1 || k < 1 || stride < 1) throw Error("make_windows: n, k, stride must be >= 1");
    std::vector<WindowSample> windows;
    const int64_t count = window_count(static_cast<int64_t>(frames.size()), n, k, stride);
    windows.reserve(static_cast<size_t>(count));
    for (int64_t w = 0; w < count; ++w) {
        const size_t base = static_cast<size_t>(w) * static_cast<size_t>(stride);
        WindowSample s;
        s.gaze_in.reserve(static_cast<size_t>(n) * 2);
        s.head_in.reserve(static_cast<size_t>(n) * 4);
        s.targets.reserve(static_cast<size_t>(k) * 2);
        for (int i = 0; i < n; ++i) {
            const AlignedFrame& f = frames[base + static_cast<size_t>(i)];
            s.gaze_in.push_back(f.gaze.x);
            s.gaze_in.push_back(f.gaze.y);
            s.head_in.push_back(f.head.w);
            s.head_in.push_back(f.head.x);
            s.head_in.push_back(f.head.y);
            s.head_in.push_back(f.head.z);
        }
        for (int i = 0; i < k; ++i) {
            const AlignedFrame& f = frames[base + static_cast<size_t>(n + i)];
            s.targets.push_back(f.gaze.x);
            s.targets.push_back(f.gaze.y);
        }
        const AlignedFrame& f0 = frames[base];
        s.scene_id = f0.scene_id;
        s.session_id = f0.session_id;
        s.scene_feature_ref = f0.scene_feature_ref;
        windows.push_back(std::move(s));
    }
    return windows;
}

std::vector<int> epoch_order(int n, std::mt19937_64& rng, bool shuffle) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    if (shuffle) {
        // Manual Fisher-Yates: identical sequences on every platform for a
        // given engine state, unlike std::shuffle.
        for (int i = n - 1; i > 0; --i) {
            const uint64_t j = rng() % static_cast<uint64_t>(i + 1);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
    }
    return order;
}

SceneSplit split_scenes(std::vector<std::string> scene_ids, int n_train, int n_val, int n_test,
                        uint64_t seed) {
    const int total = n_train + n_val + n_test;
    if (total != static_cast<int>(scene_ids.size()))
        throw CountMismatch("split counts " + std::to_string(total) + " vs " +
                            std::to_string(scene_ids.size()) + " scenes");
    std::sort(scene_ids.begin(), scene_ids.end());  // seed-stable regardless of input order
    std::mt19937_64 rng(seed);
    std::vector<int> order = epoch_order(static_cast<int>(scene_ids.size()), rng);
    SceneSplit split;
    split.seed = seed;
    for (int i = 0; i < n_train; ++i) split.train.push_back(scene_ids[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    for (int i = 0; i < n_val; ++i)
        split.val.push_back(scene_ids[static_cast<size_t>(order[static_cast<size_t>(n_train + i)])]);
    for (int i = 0; i < n_test; ++i)
        split.test.push_back(scene_ids[static_cast<size_t>(order[static_cast<size_t>(n_train + n_val + i)])]);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::string split_to_json(const SceneSplit& split) {
    json j;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    j["seed"] = split.seed;
    return j.dump(2) + "\n";
}

SceneSplit split_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        SceneSplit s;
        s.train = j.at("train").get<std::vector<std::string>>();
        s.val = j.at("val").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
        s.seed = j.at("seed").get<uint64_t>();
        std::sort(s.train.begin(), s.train.end());
        std::sort(s.val.begin(), s.val.end());
        std::sort(s.test.begin(), s.test.end());
        return s;
    } catch (const json::exception& e) {
        throw ParseError(0, std::string("split manifest: ") + e.what());
    }
}

namespace {

std::vector<float> read_f32_file(const fs::path& path, int expect_dim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file: " + path.string());
    std::vector<float> v(static_cast<size_t>(expect_dim));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(float)))
        throw IoError("feature file too short: " + path.string());
    char extra;
    if (in.read(&extra, 1))
        throw IoError("feature file longer than declared dim: " + path.string());
    return v;
}

// Binary (P5) PGM, 8-bit, square; pixels scaled to [0,1].
std::vector<float> read_pgm_file(const fs::path& path, int expect_res) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255)
        throw IoError("expected 8-bit binary PGM: " + path.string());
    if (w != expect_res || h != expect_res)
        throw ShapeMismatch("image " + path.string() + " is " + std::to_string(w) + "x" +
                            std::to_string(h) + ", expected " + std::to_string(expect_res));
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(w) * static_cast<size_t>(h));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError("image file truncated: " + path.string());
    std::vector<float> v(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) v[i] = static_cast<float>(raw[i]) / 255.0f;
    return v;
}

}  // namespace

SceneFeatureStore SceneFeatureStore::load(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open feature manifest: " + manifest_path);
    json j;
    std::string mode;
    try {
        in >> j;
        mode = j.value("mode", std::string("features"));
    } catch (const json::exception& e) {
        throw ParseError(0, std::string("feature manifest: ") + e.what());
    }
    const fs::path base = fs::path(manifest_path).parent_path();
    SceneFeatureStore store;
    try {
        for (const json& entry : j.at("scenes")) {
            const std::string scene_id = entry.at("scene_id").get<std::string>();
            const fs::path path = base / entry.at("path").get<std::string>();
            const std::string preset = entry.value("preset", std::string());
            std::vector<float> feat;
            if (mode == "features") {
                const int dim = entry.at("dim").get<int>();
                feat = read_f32_file(path, dim);
            } else if (mode == "images") {
                const int res = entry.at("resolution").get<int>();
                feat = read_pgm_file(path, res);
            } else {
                throw ParseError(0, "feature manifest: unknown mode '" + mode + "'");
            }
            store.add(scene_id, std::move(feat), preset);
        }
    } catch (const json::exception& e) {
        throw ParseError(0, std::string("feature manifest: ") + e.what());
    }
    return store;
}

int SceneFeatureStore::add(const std::string& scene_id, std::vector<float> features,
                           std::string preset) {
    if (dim_ == 0)
        dim_ = static_cast<int>(features.size());
    else if (dim_ != static_cast<int>(features.size()))
        throw ShapeMismatch("scene " + scene_id + " has dim " + std::to_string(features.size()) +
                            ", store dim " + std::to_string(dim_));
    auto [it, inserted] = index_.try_emplace(scene_id, static_cast<int>(ids_.size()));
    if (!inserted) throw Error("duplicate scene_id in feature store: " + scene_id);
    ids_.push_back(scene_id);
    presets_.push_back(std::move(preset));
    features_.push_back(std::move(features));
    return it->second;
}

int SceneFeatureStore::index_of(const std::string& scene_id) const {
    auto it = index_.find(scene_id);
    return it == index_.end() ? -1 : it->second;
}

int SceneFeatureStore::require_index(const std::string& scene_id) const {
    const int i = index_of(scene_id);
    if (i < 0) throw Error("scene_id missing from feature store: " + scene_id);
    return i;
}

std::vector<WindowSample> session_windows(const RawSession& session, const PipelineConfig& cfg,
                                          const SceneFeatureStore* store, AlignStats* stats,
                                          int* dropped) {
    std::vector<WindowSample> all;
    AlignStats agg;
    int dropped_total = 0;
    const int feature_ref = store ? store->require_index(session.scene_id) : -1;

    // First gap pass on the raw timeline: a tracking dropout severs the
    // session before any interpolation can bridge it.
    for (const std::vector<RawTraceRecord>& run : split_on_gaps(session.records, cfg.gap_factor)) {
        RawSession chunk{session.scene_id, session.session_id, run};
        int removed = 0;
        RawSession kept = filter_confidence(chunk, cfg.confidence_threshold, &removed);
        dropped_total += removed;
        if (kept.records.empty()) continue;

        // Head samples come from every record (orientation tracking does not
        // degrade with gaze confidence); gaze samples only from retained rows.
        std::vector<HeadSample> head;
        head.reserve(run.size());
        for (const RawTraceRecord& r : run) head.push_back({r.timestamp_us, r.quat});
        std::vector<GazeSample> gaze;
        gaze.reserve(kept.records.size());
        for (const RawTraceRecord& r : kept.records)
            gaze.push_back({r.timestamp_us, r.gaze_x, r.gaze_y});

        AlignStats run_stats;
        std::vector<AlignedFrame> frames = align_streams(gaze, head, cfg.bounds, &run_stats);
        agg.dropped_before += run_stats.dropped_before;
        agg.dropped_after += run_stats.dropped_after;
        agg.clamped += run_stats.clamped;
        for (AlignedFrame& f : frames) {
            f.scene_id = session.scene_id;
            f.session_id = session.session_id;
            f.scene_feature_ref = feature_ref;
        }

        // Second gap pass: confidence filtering may have punched holes into
        // the gaze clock that the raw timeline did not show.
        for (const std::vector<AlignedFrame>& seg : split_on_gaps(frames, cfg.gap_factor)) {
            std::vector<WindowSample> w = make_windows(seg, cfg.n_in, cfg.k_steps, cfg.stride);
            all.insert(all.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
        }
    }
    if (stats) *stats = agg;
    if (dropped) *dropped = dropped_total;
    return all;
}

DatasetBundle load_corpus(const std::string& corpus_dir, const PipelineConfig& cfg,
                          const SceneFeatureStore& store) {
    const fs::path root(corpus_dir);
    const fs::path trace_dir = root / "traces";
    if (!fs::is_directory(trace_dir)) throw IoError("no traces/ directory under " + corpus_dir);

    DatasetBundle bundle;
    bundle.split = split_from_json([&] {
        std::ifstream in(root / "split.json");
        if (!in) throw IoError("cannot open " + (root / "split.json").string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }());

    auto split_of = [&](const std::string& scene_id) -> std::vector<WindowSample>* {
        if (std::binary_search(bundle.split.train.begin(), bundle.split.train.end(), scene_id))
            return &bundle.train;
        if (std::binary_search(bundle.split.val.begin(), bundle.split.val.end(), scene_id))
            return &bundle.val;
        if (std::binary_search(bundle.split.test.begin(), bundle.split.test.end(), scene_id))
            return &bundle.test;
        throw Error("scene_id not in any split: " + scene_id);
    };

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(trace_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());  // directory order is not deterministic

    for (const fs::path& file : files) {
        for (const RawSession& session : ingest_traces(file.string())) {
            bundle.raw_records += static_cast<int64_t>(session.records.size());
            AlignStats stats;
            int dropped = 0;
            std::vector<WindowSample> w = session_windows(session, cfg, &store, &stats, &dropped);
            bundle.align_stats.dropped_before += stats.dropped_before;
            bundle.align_stats.dropped_after += stats.dropped_after;
            bundle.align_stats.clamped += stats.clamped;
            bundle.dropped_low_confidence += dropped;
            std::vector<WindowSample>* dst = split_of(session.scene_id);
            dst->insert(dst->end(), std::make_move_iterator(w.begin()),
                        std::make_move_iterator(w.end()));
        }
    }
    return bundle;
}

}  // namespace foveacast
