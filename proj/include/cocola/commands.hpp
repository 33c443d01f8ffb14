#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Command implementations behind the `cocola` tool, exposed as functions so
// reruns and exit-code behaviour are directly testable. Each command writes
// a run manifest next to its outputs (config snapshot, seed, input digests
// recorded before processing, output paths, tool version, timestamps) and
// refuses to overwrite existing outputs unless forced.
//
// Exit codes: 0 success, 2 config errors, 3 data errors, 4 numeric
// failures, 1 anything else.

namespace cli {

inline constexpr const char* kToolName = "cocola";
inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kOk = 0;
inline constexpr int kInternalError = 1;
inline constexpr int kConfigExit = 2;
inline constexpr int kDataExit = 3;
inline constexpr int kNumericExit = 4;

struct BuildArgs {
    std::filesystem::path template_dir;
    std::filesystem::path data_file;
    std::filesystem::path out_dir;
    size_t cap = 2000;
    uint64_t seed = 0;
    bool synth = false;
    bool force = false;
};

struct TrainArgs {
    std::filesystem::path config_file;
    std::filesystem::path streams_dir;
    std::filesystem::path out_dir;
    std::optional<uint64_t> seed_override;
    std::optional<double> rehearsal_override;
    std::optional<int> cap_override;
    std::optional<int> threads_override;
    bool force = false;
};

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path eval_dir;
    std::filesystem::path out_file;
    int max_new = 0;
    int threads = 1;
    bool force = false;
};

struct ReportArgs {
    std::filesystem::path chain_report;
    std::vector<std::filesystem::path> snapshots;
    std::optional<std::filesystem::path> out_file;
};

int cmd_build(const BuildArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);

}  // namespace cli
