#ifndef VPIT_STREAM_HPP
#define VPIT_STREAM_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vpit/geometry.hpp"
#include "vpit/metrics.hpp"
#include "vpit/tracker.hpp"

namespace vpit {

/// One object followed through a sequence of frames. Clouds may be shared
/// between sequences cut from the same scene.
struct TrackSequence {
  std::string name;
  std::shared_ptr<const std::vector<PointCloud>> clouds;
  std::vector<Box3D> labels;  // one per frame
  double data_rate = 10.0;

  std::size_t size() const { return labels.size(); }
};

/// A single-object tracker as seen by the evaluation harness.
class FrameTracker {
 public:
  virtual ~FrameTracker() = default;
  virtual void init(const PointCloud& cloud, const Box3D& box, std::size_t frame) = 0;
  virtual Box3D step(const PointCloud& cloud, std::size_t frame) = 0;
};

using TrackerFactory = std::function<std::unique_ptr<FrameTracker>()>;

/// Returns the ground-truth box of whatever frame it is given.
class GtEchoTracker : public FrameTracker {
 public:
  explicit GtEchoTracker(std::vector<Box3D> labels) : labels_(std::move(labels)) {}
  void init(const PointCloud&, const Box3D&, std::size_t) override {}
  Box3D step(const PointCloud&, std::size_t frame) override { return labels_.at(frame); }

 private:
  std::vector<Box3D> labels_;
};

/// Adapts the VPIT tracker to the evaluation harness.
class VpitFrameTracker : public FrameTracker {
 public:
  VpitFrameTracker(std::shared_ptr<const nn::SiamModel> model, TrackerConfig cfg, PillarConfig pillar_cfg)
      : tracker_(std::move(model), cfg, std::move(pillar_cfg)) {}
  void init(const PointCloud& cloud, const Box3D& box, std::size_t) override { tracker_.init(cloud, box); }
  Box3D step(const PointCloud& cloud, std::size_t) override { return tracker_.step(cloud).box; }
  const VpitTracker& tracker() const { return tracker_; }

 private:
  VpitTracker tracker_;
};

struct LatencyModel {
  enum class Kind { kMeasured, kInjected };
  Kind kind = Kind::kInjected;
  std::vector<double> injected_seconds{0.0};  // one value = constant, else per frame
  double data_rate = 10.0;

  static LatencyModel injected(double seconds, double rate) { return {Kind::kInjected, {seconds}, rate}; }
  static LatencyModel measured(double rate) { return {Kind::kMeasured, {}, rate}; }

  void validate() const {
    if (!(data_rate > 0.0)) throw std::invalid_argument("data_rate must be > 0");
    if (kind == Kind::kInjected) {
      if (injected_seconds.empty()) throw std::invalid_argument("injected latency needs at least one value");
      for (double s : injected_seconds) {
        if (!(s >= 0.0)) throw std::invalid_argument("injected latency must be >= 0");
      }
    }
  }

  std::int64_t injected_ns(std::size_t frame) const {
    const double s = injected_seconds.size() == 1 ? injected_seconds[0] : injected_seconds.at(frame);
    return static_cast<std::int64_t>(std::llround(s * 1e9));
  }
};

inline std::int64_t arrival_ns(std::size_t frame, double data_rate) {
  return static_cast<std::int64_t>(std::llround(static_cast<double>(frame) * 1e9 / data_rate));
}

struct StreamPrediction {
  std::size_t frame = 0;       // input frame index
  std::int64_t start_ns = 0;
  std::int64_t done_ns = 0;
  Box3D box;
};

/// Times are integer nanoseconds from the arrival of frame 0. Prediction 0
/// is always the initialization box, completed at time 0.
struct StreamTimeline {
  double data_rate = 10.0;
  std::vector<std::int64_t> arrivals;
  std::vector<bool> processed;
  std::vector<StreamPrediction> predictions;
  std::size_t dropped = 0;
  std::int64_t busy_ns = 0;  // processing time of frames 1.., excludes init

  std::size_t frames() const { return arrivals.size(); }
  double drop_percent() const {
    return frames() > 1 ? 100.0 * static_cast<double>(dropped) / static_cast<double>(frames() - 1) : 0.0;
  }
  double fps() const {
    const std::size_t n = predictions.empty() ? 0 : predictions.size() - 1;
    return busy_ns > 0 ? static_cast<double>(n) / (static_cast<double>(busy_ns) * 1e-9) : 0.0;
  }
};

/// Single-worker streaming simulation. When the worker frees up it takes the
/// most recent frame that has arrived and was not processed; older pending
/// frames are dropped. If nothing is pending it waits for the next arrival.
inline StreamTimeline simulate_stream(FrameTracker& tracker, const TrackSequence& seq, const LatencyModel& latency) {
  latency.validate();
  const std::size_t n = seq.size();
  if (n < 2) throw std::invalid_argument("simulate_stream needs at least two frames");
  const auto& clouds = *seq.clouds;
  StreamTimeline tl;
  tl.data_rate = latency.data_rate;
  tl.processed.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) tl.arrivals.push_back(arrival_ns(i, latency.data_rate));

  tracker.init(clouds.at(0), seq.labels[0], 0);
  tl.processed[0] = true;
  tl.predictions.push_back({0, 0, 0, seq.labels[0]});

  std::int64_t free_at = 0;
  std::size_t last = 0;
  while (last + 1 < n) {
    // Latest frame that has arrived by free_at; otherwise wait for the next one.
    std::size_t next = last + 1;
    while (next + 1 < n && tl.arrivals[next + 1] <= free_at) ++next;
    const std::int64_t start = std::max(free_at, tl.arrivals[next]);
    tl.dropped += next - last - 1;

    std::int64_t cost = 0;
    Box3D box;
    if (latency.kind == LatencyModel::Kind::kMeasured) {
      const auto t0 = std::chrono::steady_clock::now();
      box = tracker.step(clouds.at(next), next);
      cost = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
    } else {
      box = tracker.step(clouds.at(next), next);
      cost = latency.injected_ns(next);
    }
    tl.processed[next] = true;
    tl.predictions.push_back({next, start, start + cost, box});
    tl.busy_ns += cost;
    free_at = start + cost;
    last = next;
  }
  return tl;
}

namespace detail {

// Latest prediction with done <= deadline(i) and input frame <= max_frame(i).
// Falls back to prediction 0.
template <class Deadline>
std::vector<std::size_t> associate(const StreamTimeline& tl, Deadline deadline, bool causal_frames) {
  std::vector<std::size_t> out(tl.frames(), 0);
  for (std::size_t i = 0; i < tl.frames(); ++i) {
    const std::int64_t limit = deadline(i);
    std::size_t best = 0;
    for (std::size_t j = 0; j < tl.predictions.size(); ++j) {
      const auto& p = tl.predictions[j];
      if (p.done_ns <= limit && (!causal_frames || p.frame <= i)) best = j;
    }
    out[i] = best;
  }
  return out;
}

}  // namespace detail

/// l_pr(i): latest prediction completed at or before the arrival of frame i.
inline std::vector<std::size_t> associate_predictive(const StreamTimeline& tl) {
  return detail::associate(tl, [&](std::size_t i) { return tl.arrivals[i]; }, false);
}

/// l_npr(i): latest prediction completed at or before the arrival of frame
/// i + 1 (one period past the last frame for the final label), restricted to
/// predictions whose input is not newer than frame i.
inline std::vector<std::size_t> associate_nonpredictive(const StreamTimeline& tl) {
  return detail::associate(
      tl,
      [&](std::size_t i) {
        return i + 1 < tl.frames() ? tl.arrivals[i + 1] : arrival_ns(i + 1, tl.data_rate);
      },
      true);
}

enum class EvalMode { kOffline, kPredictive, kNonPredictive };

inline const char* to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kOffline: return "offline";
    case EvalMode::kPredictive: return "realtime-pred";
    case EvalMode::kNonPredictive: return "realtime-nonpred";
  }
  return "?";
}

struct SequenceEval {
  std::string name;
  std::vector<Box3D> predictions;      // one per label, after association
  std::vector<std::size_t> association;  // prediction ordinal per label (realtime)
  std::vector<std::size_t> prediction_frames;
  std::size_t frames = 0;
  std::size_t dropped = 0;
  std::size_t processed = 0;  // excluding init
  std::int64_t busy_ns = 0;
  OpeResult ope;
  std::string error;
};

struct EvalSummary {
  EvalMode mode = EvalMode::kOffline;
  OpeResult ope;  // over all frames of all sequences
  double fps = 0.0;
  double drop_percent = 0.0;
  std::vector<SequenceEval> sequences;
};

/// Runs the tracker on every frame and times each step.
inline SequenceEval run_offline(FrameTracker& tracker, const TrackSequence& seq) {
  SequenceEval ev;
  ev.name = seq.name;
  ev.frames = seq.size();
  const auto& clouds = *seq.clouds;
  tracker.init(clouds.at(0), seq.labels.at(0), 0);
  ev.predictions.push_back(seq.labels[0]);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    ev.predictions.push_back(tracker.step(clouds.at(i), i));
    ev.busy_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  }
  ev.processed = seq.size() - 1;
  ev.ope = ope_metrics(ev.predictions, seq.labels);
  return ev;
}

inline SequenceEval run_realtime(FrameTracker& tracker, const TrackSequence& seq, const LatencyModel& latency,
                                 EvalMode mode) {
  const StreamTimeline tl = simulate_stream(tracker, seq, latency);
  SequenceEval ev;
  ev.name = seq.name;
  ev.frames = seq.size();
  ev.association = mode == EvalMode::kPredictive ? associate_predictive(tl) : associate_nonpredictive(tl);
  for (const auto& p : tl.predictions) ev.prediction_frames.push_back(p.frame);
  for (std::size_t i = 0; i < seq.size(); ++i) ev.predictions.push_back(tl.predictions[ev.association[i]].box);
  ev.dropped = tl.dropped;
  ev.processed = tl.predictions.size() - 1;
  ev.busy_ns = tl.busy_ns;
  ev.ope = ope_metrics(ev.predictions, seq.labels);
  return ev;
}

/// Evaluates every sequence with a fresh tracker, using up to `jobs` worker
/// threads. A failing sequence records its error and is left out of the
/// aggregate metrics.
inline EvalSummary evaluate(const TrackerFactory& factory, const std::vector<TrackSequence>& sequences,
                            EvalMode mode, const LatencyModel& latency, std::size_t jobs = 1) {
  EvalSummary sum;
  sum.mode = mode;
  sum.sequences.resize(sequences.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < sequences.size(); k = next++) {
      try {
        auto tracker = factory();
        sum.sequences[k] = mode == EvalMode::kOffline ? run_offline(*tracker, sequences[k])
                                                      : run_realtime(*tracker, sequences[k], latency, mode);
      } catch (const std::exception& e) {
        sum.sequences[k] = SequenceEval{};
        sum.sequences[k].name = sequences[k].name;
        sum.sequences[k].error = e.what();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, sequences.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  std::vector<double> ious, dists;
  std::size_t dropped = 0, droppable = 0, processed = 0;
  std::int64_t busy = 0;
  for (const auto& s : sum.sequences) {
    if (!s.error.empty()) continue;
    ious.insert(ious.end(), s.ope.ious.begin(), s.ope.ious.end());
    dists.insert(dists.end(), s.ope.distances.begin(), s.ope.distances.end());
    dropped += s.dropped;
    droppable += s.frames - 1;
    processed += s.processed;
    busy += s.busy_ns;
  }
  if (ious.empty()) throw std::runtime_error("every sequence failed to evaluate");
  sum.ope = ope_from_errors(std::move(ious), std::move(dists));
  sum.drop_percent = droppable ? 100.0 * static_cast<double>(dropped) / static_cast<double>(droppable) : 0.0;
  sum.fps = busy > 0 ? static_cast<double>(processed) / (static_cast<double>(busy) * 1e-9) : 0.0;
  return sum;
}

}  // namespace vpit

#endif  // VPIT_STREAM_HPP
