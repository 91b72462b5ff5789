#pragma once

// Append-only newline-delimited JSON log. Every line is one self-describing
// record: {"schema", "run", "time", "kind", "data"}. Doubles are written in
// shortest round-trip form, so values read back compare equal bit for bit.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>

#include "fatlab/training.hpp"

namespace fatlab {

using Json = nlohmann::json;

inline constexpr int kMetricsSchemaVersion = 1;

void to_json(Json& j, const EpochRecord& r);
void from_json(const Json& j, EpochRecord& r);

inline void to_json(Json& j, const EpochRecord& r) {
    j = Json{{"epoch", r.epoch},
             {"learning_rate", r.learning_rate},
             {"train_loss", r.train_loss},
             {"train_ce", r.train_ce},
             {"train_regression", r.train_regression},
             {"l_stable", r.l_stable},
             {"l_co", r.l_co},
             {"l_align", r.l_align},
             {"train_accuracy", r.train_accuracy},
             {"clean_accuracy", r.clean_accuracy},
             {"probe_clean_accuracy", r.probe_clean_accuracy},
             {"probe_fgsm_accuracy", r.probe_fgsm_accuracy},
             {"probe_robust_accuracy", r.probe_robust_accuracy},
             {"v_act", r.v_act},
             {"co_channels", r.co_channels}};
}

inline void from_json(const Json& j, EpochRecord& r) {
    r.epoch = j.at("epoch").get<int>();
    r.learning_rate = j.at("learning_rate").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.train_ce = j.at("train_ce").get<double>();
    r.train_regression = j.at("train_regression").get<double>();
    r.l_stable = j.at("l_stable").get<double>();
    r.l_co = j.at("l_co").get<double>();
    r.l_align = j.at("l_align").get<double>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.probe_clean_accuracy = j.at("probe_clean_accuracy").get<double>();
    r.probe_fgsm_accuracy = j.at("probe_fgsm_accuracy").get<double>();
    r.probe_robust_accuracy = j.at("probe_robust_accuracy").get<double>();
    r.v_act = j.at("v_act").get<std::vector<double>>();
    r.co_channels = j.at("co_channels").get<std::vector<int>>();
}

inline void to_json(Json& j, const CoEvent& e) {
    j = Json{{"epoch", e.epoch}, {"robust_before", e.robust_before}, {"robust_after", e.robust_after}, {"drop", e.drop}};
}

inline void from_json(const Json& j, CoEvent& e) {
    e.epoch = j.at("epoch").get<int>();
    e.robust_before = j.at("robust_before").get<double>();
    e.robust_after = j.at("robust_after").get<double>();
    e.drop = j.at("drop").get<double>();
}

inline void to_json(Json& j, const ChannelStats& s) {
    j = Json{{"node", s.node},
             {"raw", s.raw},
             {"t_values", s.t_values},
             {"alpha", s.alpha},
             {"aggregation", to_string(s.aggregation)},
             {"dataset_tag", to_string(s.dataset_tag)},
             {"samples", s.samples}};
}

inline void from_json(const Json& j, ChannelStats& s) {
    s.node = j.at("node").get<std::string>();
    s.raw = j.at("raw").get<std::vector<double>>();
    s.t_values = j.at("t_values").get<std::vector<double>>();
    s.alpha = j.at("alpha").get<double>();
    s.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    s.dataset_tag = dataset_tag_from_string(j.at("dataset_tag").get<std::string>());
    s.samples = j.at("samples").get<std::size_t>();
}

inline void to_json(Json& j, const AttackOutcome& a) {
    j = Json{{"name", a.name}, {"accuracy", a.accuracy}, {"adversarial_hash", a.adversarial_hash}};
}

inline void from_json(const Json& j, AttackOutcome& a) {
    a.name = j.at("name").get<std::string>();
    a.accuracy = j.at("accuracy").get<double>();
    a.adversarial_hash = j.at("adversarial_hash").get<std::string>();
}

inline void to_json(Json& j, const EvalReport& r) {
    j = Json{{"samples", r.samples},       {"clean_accuracy", r.clean_accuracy},
             {"attacks", r.attacks},       {"noise", r.noise},
             {"noise_seed", r.noise_seed}, {"masked_channels", r.masked_channels},
             {"trials", r.trials},         {"adaptive", r.adaptive}};
}

inline void from_json(const Json& j, EvalReport& r) {
    r.samples = j.at("samples").get<std::size_t>();
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.attacks = j.at("attacks").get<std::vector<AttackOutcome>>();
    r.noise = j.at("noise").get<std::string>();
    r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    r.masked_channels = j.at("masked_channels").get<std::size_t>();
    r.trials = j.at("trials").get<int>();
    r.adaptive = j.at("adaptive").get<bool>();
}

inline void to_json(Json& j, const IncrementMatrix& m) {
    j = Json{{"node", m.node}, {"aggregation", to_string(m.aggregation)}, {"rows", m.rows}};
}

inline void from_json(const Json& j, IncrementMatrix& m) {
    m.node = j.at("node").get<std::string>();
    m.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    m.rows = j.at("rows").get<std::vector<std::vector<double>>>();
}

enum class RecordKind { config, epoch, co_event, channel_stats, eval, increments };

inline std::string to_string(RecordKind k) {
    switch (k) {
        case RecordKind::config: return "config";
        case RecordKind::epoch: return "epoch";
        case RecordKind::co_event: return "co_event";
        case RecordKind::channel_stats: return "channel_stats";
        case RecordKind::eval: return "eval";
        case RecordKind::increments: return "increments";
    }
    return "?";
}

inline RecordKind record_kind_from_string(const std::string& s) {
    for (auto k : {RecordKind::config, RecordKind::epoch, RecordKind::co_event, RecordKind::channel_stats,
                   RecordKind::eval, RecordKind::increments})
        if (to_string(k) == s) return k;
    throw FormatError("unknown record kind: " + s);
}

struct LogRecord {
    int schema = kMetricsSchemaVersion;
    std::string run;
    std::string time;  // UTC, ISO 8601
    RecordKind kind = RecordKind::epoch;
    Json data;
    // Free-form context such as the alpha_2 of a mask sweep point or the
    // command that produced an eval report.
    Json tags = Json::object();
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline Json to_json_line(const LogRecord& r) {
    return Json{{"schema", r.schema}, {"run", r.run},   {"time", r.time},
                {"kind", to_string(r.kind)}, {"data", r.data}, {"tags", r.tags}};
}

inline LogRecord parse_log_line(const std::string& line) {
    Json j;
    try {
        j = Json::parse(line);
    } catch (const Json::parse_error& e) {
        throw FormatError(std::string("malformed metrics line: ") + e.what());
    }
    LogRecord r;
    r.schema = j.at("schema").get<int>();
    if (r.schema != kMetricsSchemaVersion) throw FormatError("unsupported metrics schema " + std::to_string(r.schema));
    r.run = j.at("run").get<std::string>();
    r.time = j.at("time").get<std::string>();
    r.kind = record_kind_from_string(j.at("kind").get<std::string>());
    r.data = j.at("data");
    if (j.contains("tags")) r.tags = j.at("tags");
    return r;
}

/// Exclusive lock on a run directory, held for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir) : path_(dir / "lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) throw Error("run directory is locked by another writer: " + path_.string());
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto written = ::write(fd_, pid.data(), pid.size());  // informational only
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() {
        ::close(fd_);
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

/// Writer side. Opening fails if the file already holds records for the
/// same run id, so re-running a command never overwrites an earlier run.
class MetricsLog {
public:
    MetricsLog(std::filesystem::path path, std::string run_id) : path_(std::move(path)), run_(std::move(run_id)) {
        if (run_.empty()) throw ConfigError("run id must not be empty");
        if (std::filesystem::exists(path_))
            for (const auto& r : read_all(path_))
                if (r.run == run_) throw Error("run id already present in " + path_.string() + ": " + run_);
        out_.open(path_, std::ios::app);
        if (!out_) throw Error("cannot open metrics log " + path_.string());
    }

    const std::string& run_id() const noexcept { return run_; }
    const std::filesystem::path& path() const noexcept { return path_; }

    void append(RecordKind kind, Json data, Json tags = Json::object()) {
        LogRecord r;
        r.run = run_;
        r.time = utc_timestamp();
        r.kind = kind;
        r.data = std::move(data);
        r.tags = std::move(tags);
        out_ << to_json_line(r).dump() << '\n';
        out_.flush();
        if (!out_) throw Error("write to metrics log failed: " + path_.string());
    }

    static std::vector<LogRecord> read_all(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open metrics log " + path.string());
        std::vector<LogRecord> out;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(parse_log_line(line));
        return out;
    }

private:
    std::filesystem::path path_;
    std::string run_;
    std::ofstream out_;
};

template <typename V>
std::vector<V> records_of(const std::vector<LogRecord>& log, RecordKind kind) {
    std::vector<V> out;
    for (const auto& r : log)
        if (r.kind == kind) out.push_back(r.data.get<V>());
    return out;
}

}  // namespace fatlab
