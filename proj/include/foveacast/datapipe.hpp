#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "foveacast/geometry.hpp"
#include "foveacast/mat.hpp"

namespace foveacast {

// One row of a raw trace CSV: synchronized gaze + head sample at one device
// timestamp, in raw device units.
struct RawTraceRecord {
    int64_t timestamp_us = 0;
    double gaze_x = 0.0, gaze_y = 0.0;
    double confidence = 0.0;
    Quaternion quat;
    std::string scene_id;
    std::string session_id;
};

// Records of one session, sorted by timestamp with duplicates collapsed.
struct RawSession {
    std::string scene_id;
    std::string session_id;
    std::vector<RawTraceRecord> records;
};

struct GazeSample {
    int64_t t_us = 0;
    double x = 0.0, y = 0.0;  // raw device units
};

struct HeadSample {
    int64_t t_us = 0;
    Quaternion q;
};

struct AlignedFrame {
    int64_t t_us = 0;
    GazePoint gaze;  // normalized to [0,1]^2
    Quaternion head;
    std::string scene_id;
    std::string session_id;
    int scene_feature_ref = -1;
};

struct AlignStats {
    int dropped_before = 0;  // gaze samples ahead of head coverage
    int dropped_after = 0;   // gaze samples past head coverage
    int clamped = 0;         // gaze points clamped into [0,1]^2
};

// Fixed-size training window: n_in input frames followed by k target gaze
// points, all from one session and contiguous at the pipeline stride.
struct WindowSample {
    std::vector<double> gaze_in;   // n_in * 2
    std::vector<double> head_in;   // n_in * 4
    std::vector<double> targets;   // k * 2
    std::string scene_id;
    std::string session_id;
    int scene_feature_ref = -1;
};

struct SceneSplit {
    std::vector<std::string> train, val, test;
    uint64_t seed = 0;
};

struct PipelineConfig {
    double confidence_threshold = 0.8;  // strict >
    double gap_factor = 5.0;            // split on jumps > gap_factor * median interval
    GazeBounds bounds{0.0, 1.0, 0.0, 1.0};
    int n_in = 15;
    int k_steps = 3;
    int stride = 1;
};

// --- ingestion -------------------------------------------------------------

// Parse a trace CSV into sessions, grouped by session_id in order of first
// appearance, each sorted by timestamp with duplicate timestamps collapsed to
// the last occurrence. Throws ParseError (1-based line), MissingColumn,
// NonMonotonicTimestamp.
std::vector<RawSession> ingest_traces(const std::string& path);

// Same parser over an in-memory buffer; `origin` names the source in errors.
std::vector<RawSession> ingest_traces_text(const std::string& text, const std::string& origin);

// Keep records with confidence strictly above the threshold; `dropped`
// receives the removed count. Idempotent.
RawSession filter_confidence(const RawSession& session, double threshold, int* dropped = nullptr);

// Split a sorted timestamp-carrying sequence wherever the inter-sample jump
// exceeds gap_factor times the median interval. Single-sample inputs pass
// through; the result preserves order and concatenates back to the input.
std::vector<std::vector<RawTraceRecord>> split_on_gaps(const std::vector<RawTraceRecord>& records,
                                                       double gap_factor);
std::vector<std::vector<AlignedFrame>> split_on_gaps(const std::vector<AlignedFrame>& frames,
                                                     double gap_factor);

// Resample the head stream onto the gaze clock: one frame per gaze sample
// whose timestamp lies inside head coverage, head quaternion SLERPed between
// the bracketing samples (exact matches take the sample itself), gaze
// normalized into [0,1]^2 under `bounds`. Gaze samples outside coverage are
// dropped and counted. Throws EmptyInput, NoOverlap.
std::vector<AlignedFrame> align_streams(const std::vector<GazeSample>& gaze,
                                        const std::vector<HeadSample>& head,
                                        const GazeBounds& bounds, AlignStats* stats = nullptr);

// Closed-form window count for a session of length L.
int64_t window_count(int64_t length, int n, int k, int stride);

// Cut overlapping n-in/k-target windows from one contiguous frame run.
std::vector<WindowSample> make_windows(const std::vector<AlignedFrame>& frames, int n, int k,
                                       int stride);

// Deterministic scene partition: shuffle under seed, slice by counts.
// Throws CountMismatch when counts do not sum to the id count.
SceneSplit split_scenes(std::vector<std::string> scene_ids, int n_train, int n_val, int n_test,
                        uint64_t seed);

std::string split_to_json(const SceneSplit& split);
SceneSplit split_from_json(const std::string& text);

// --- scene features ---------------------------------------------------------

// Per-scene feature vectors (or grayscale images flattened to [0,1] floats),
// resolved by index at batch-assembly time.
class SceneFeatureStore {
  public:
    // Load from a manifest JSON; mode "features" reads little-endian float32
    // arrays, mode "images" reads 8-bit binary PGM files. Paths are resolved
    // relative to the manifest's directory.
    static SceneFeatureStore load(const std::string& manifest_path);

    int add(const std::string& scene_id, std::vector<float> features, std::string preset = "");
    int index_of(const std::string& scene_id) const;  // -1 when absent
    int require_index(const std::string& scene_id) const;

    const std::vector<float>& features(int ref) const { return features_.at(static_cast<size_t>(ref)); }
    const std::string& scene_id(int ref) const { return ids_.at(static_cast<size_t>(ref)); }
    const std::string& preset(int ref) const { return presets_.at(static_cast<size_t>(ref)); }
    int dim() const { return dim_; }
    int size() const { return static_cast<int>(ids_.size()); }

  private:
    int dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::string> presets_;
    std::vector<std::vector<float>> features_;
    std::map<std::string, int> index_;
};

// Full per-session pipeline: confidence filter, gap split on the raw
// timeline, gaze/head stream separation (head interpolates across the
// unfiltered timeline), alignment, second gap split, windowing, feature-ref
// resolution. Low-confidence rows still contribute head samples.
std::vector<WindowSample> session_windows(const RawSession& session, const PipelineConfig& cfg,
                                          const SceneFeatureStore* store = nullptr,
                                          AlignStats* stats = nullptr, int* dropped = nullptr);

// --- batching ---------------------------------------------------------------

template <typename T>
struct Batch {
    std::vector<Mat<T>> gaze_seq;  // n_in of B x 2
    std::vector<Mat<T>> head_seq;  // n_in of B x 4
    Mat<T> scene;                  // B x feature dim
    std::vector<Mat<T>> targets;   // k of B x 2
    std::vector<int> window_indices;
    bool partial = false;
};

// Pack the selected windows batch-major. All windows must share n/k shapes.
template <typename T>
Batch<T> pack_batch(const std::vector<WindowSample>& windows, const std::vector<int>& order,
                    int begin, int count, const SceneFeatureStore& store) {
    if (count <= 0) throw EmptyInput("pack_batch");
    const WindowSample& first = windows.at(static_cast<size_t>(order.at(static_cast<size_t>(begin))));
    const int n = static_cast<int>(first.gaze_in.size() / 2);
    const int k = static_cast<int>(first.targets.size() / 2);
    Batch<T> b;
    b.gaze_seq.assign(static_cast<size_t>(n), Mat<T>(count, 2));
    b.head_seq.assign(static_cast<size_t>(n), Mat<T>(count, 4));
    b.targets.assign(static_cast<size_t>(k), Mat<T>(count, 2));
    b.scene = Mat<T>(count, store.dim());
    b.window_indices.reserve(static_cast<size_t>(count));
    for (int r = 0; r < count; ++r) {
        const int wi = order.at(static_cast<size_t>(begin + r));
        const WindowSample& w = windows.at(static_cast<size_t>(wi));
        if (static_cast<int>(w.gaze_in.size()) != n * 2 ||
            static_cast<int>(w.targets.size()) != k * 2)
            throw ShapeMismatch("pack_batch: ragged window shapes");
        b.window_indices.push_back(wi);
        for (int t = 0; t < n; ++t) {
            b.gaze_seq[static_cast<size_t>(t)](r, 0) = static_cast<T>(w.gaze_in[static_cast<size_t>(2 * t)]);
            b.gaze_seq[static_cast<size_t>(t)](r, 1) = static_cast<T>(w.gaze_in[static_cast<size_t>(2 * t + 1)]);
            for (int c = 0; c < 4; ++c)
                b.head_seq[static_cast<size_t>(t)](r, c) =
                    static_cast<T>(w.head_in[static_cast<size_t>(4 * t + c)]);
        }
        for (int s = 0; s < k; ++s)
            for (int c = 0; c < 2; ++c)
                b.targets[static_cast<size_t>(s)](r, c) =
                    static_cast<T>(w.targets[static_cast<size_t>(2 * s + c)]);
        const std::vector<float>& feat = store.features(w.scene_feature_ref);
        for (int c = 0; c < store.dim(); ++c)
            b.scene(r, c) = static_cast<T>(feat[static_cast<size_t>(c)]);
    }
    return b;
}

// Seeded epoch order: identity permutation shuffled by Fisher-Yates so the
// sequence is reproducible across platforms.
std::vector<int> epoch_order(int n, std::mt19937_64& rng, bool shuffle = true);

// One epoch's worth of batches over a fixed order; the trailing short batch
// is emitted with partial = true.
template <typename T>
class BatchIterator {
  public:
    BatchIterator(const std::vector<WindowSample>& windows, const SceneFeatureStore& store,
                  std::vector<int> order, int batch_size)
        : windows_(&windows), store_(&store), order_(std::move(order)), batch_size_(batch_size) {}

    std::optional<Batch<T>> next() {
        const int n = static_cast<int>(order_.size());
        if (pos_ >= n) return std::nullopt;
        const int count = std::min(batch_size_, n - pos_);
        Batch<T> b = pack_batch<T>(*windows_, order_, pos_, count, *store_);
        b.partial = count < batch_size_;
        pos_ += count;
        return b;
    }

    int total_batches() const {
        const int n = static_cast<int>(order_.size());
        return static_cast<int>((n + batch_size_ - 1) / batch_size_);
    }

  private:
    const std::vector<WindowSample>* windows_;
    const SceneFeatureStore* store_;
    std::vector<int> order_;
    int batch_size_;
    int pos_ = 0;
};

// Bounded single-producer/single-consumer handoff queue. push blocks at
// capacity; pop blocks until an item or close() arrives.
template <typename T>
class BoundedQueue {
  public:
    explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

    bool push(T item) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_space_.wait(lk, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        cv_item_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock<std::mutex> lk(mu_);
        cv_item_.wait(lk, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T out = std::move(items_.front());
        items_.pop_front();
        cv_space_.notify_one();
        return out;
    }

    void close() {
        std::lock_guard<std::mutex> lk(mu_);
        closed_ = true;
        cv_item_.notify_all();
        cv_space_.notify_all();
    }

  private:
    size_t capacity_;
    std::deque<T> items_;
    bool closed_ = false;
    std::mutex mu_;
    std::condition_variable cv_item_;
    std::condition_variable cv_space_;
};

// Background batch builder: packs batches on a worker thread in the exact
// epoch order, so consumption is deterministic while packing overlaps
// compute. Depth bounds memory.
template <typename T>
class PrefetchLoader {
  public:
    PrefetchLoader(const std::vector<WindowSample>& windows, const SceneFeatureStore& store,
                   std::vector<int> order, int batch_size, size_t depth)
        : queue_(depth == 0 ? 1 : depth) {
        worker_ = std::thread([this, &windows, &store, order = std::move(order), batch_size] {
            BatchIterator<T> it(windows, store, order, batch_size);
            while (auto b = it.next()) {
                if (!queue_.push(std::move(*b))) return;
            }
            queue_.close();
        });
    }

    ~PrefetchLoader() {
        queue_.close();
        if (worker_.joinable()) worker_.join();
    }

    std::optional<Batch<T>> next() { return queue_.pop(); }

  private:
    BoundedQueue<Batch<T>> queue_;
    std::thread worker_;
};

// --- corpus assembly ---------------------------------------------------------

// Windows for one split of a generated corpus directory (traces/*.csv,
// features/manifest.json, split.json).
struct DatasetBundle {
    std::vector<WindowSample> train, val, test;
    SceneSplit split;
    AlignStats align_stats;
    int dropped_low_confidence = 0;
    int64_t raw_records = 0;
};

DatasetBundle load_corpus(const std::string& corpus_dir, const PipelineConfig& cfg,
                          const SceneFeatureStore& store);

}  // namespace foveacast
