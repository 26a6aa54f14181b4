#pragma once

#include "combolab/arch/model.hpp"
#include "combolab/data/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace combolab::eval {

inline constexpr const char* kDefaultUnconditionalContext = "Answer:";

struct McqTask {
    std::string id;
    std::string context;
    std::vector<std::string> options;
    std::size_t answer_index = 0;
    std::string unconditional_context = kDefaultUnconditionalContext;

    // Throws std::invalid_argument naming the task.
    void validate() const;
};

// One JSON object per line: {"id", "context", "options", "answer_index",
// optional "unconditional_context"}. Errors report "file:line".
std::vector<McqTask> read_tasks_jsonl(const std::filesystem::path& path);
void write_tasks_jsonl(const std::filesystem::path& path, const std::vector<McqTask>& tasks);

enum class Span { OptionOnly, FullSequence };

struct ScoringMode {
    Span span = Span::OptionOnly;
    bool length_norm = false;
    bool unconditional_norm = false;

    bool valid() const { return !unconditional_norm || span == Span::OptionOnly; }
    std::string name() const;
    bool operator==(const ScoringMode&) const = default;
};

ScoringMode parse_scoring_mode(std::string_view name);

// The six valid modes in canonical order.
std::vector<ScoringMode> scoring_grid();

struct FewShotConfig {
    std::size_t k_shots = 0;
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    bool shuffle_demos = true;

    void validate() const;
};

FewShotConfig one_shot_preset();   // 1 demo, 10 repeats
FewShotConfig five_shot_preset();  // 5 demos, 5 repeats
FewShotConfig fewshot_preset(std::string_view name);  // "zero", "one", "five"

class McqRunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Log-probabilities needed by every scoring mode for one option.
struct OptionLogProbs {
    std::vector<double> context;        // final context tokens
    std::vector<double> option;         // option tokens
    std::vector<double> unconditional;  // option tokens after the neutral context
};

// Prompt: [BOS demo_ctx demo_opt]... BOS context option. Throws
// std::length_error when a sequence exceeds the model's max_seq.
std::vector<OptionLogProbs> option_logprobs(arch::Model& model, const data::Tokenizer& tokenizer,
                                            const std::vector<const McqTask*>& demos, const McqTask& task,
                                            bool need_unconditional = true);

double mode_score(const OptionLogProbs& lp, const ScoringMode& mode);

double score_option(arch::Model& model, const data::Tokenizer& tokenizer, const std::string& context,
                    const std::string& option, const ScoringMode& mode,
                    const std::string& unconditional_context = kDefaultUnconditionalContext);

// Highest score, ties to the lowest index.
std::size_t argmax_option(const std::vector<double>& scores);

struct McqPrediction {
    std::size_t task = 0;
    std::size_t repeat = 0;
    std::size_t predicted = 0;
    bool correct = false;
};

struct McqResult {
    ScoringMode mode;
    double accuracy = 0.0;  // mean over repeats
    std::vector<double> per_repeat;
    std::size_t skipped = 0;  // overlong prompts, summed over repeats
    std::vector<McqPrediction> predictions;
};

// Demos for repeat r come from substream "fewshot/<r>" of the seed. Fails
// with McqRunError when more than 10% of prompts are skipped as overlong.
McqResult evaluate_mcq(arch::Model& model, const data::Tokenizer& tokenizer, const std::vector<McqTask>& tasks,
                       const ScoringMode& mode, const FewShotConfig& fewshot,
                       const std::vector<McqTask>& demo_pool);

// Every mode of the grid from a single pass over the prompts, in grid order.
std::vector<McqResult> evaluate_mcq_grid(arch::Model& model, const data::Tokenizer& tokenizer,
                                         const std::vector<McqTask>& tasks, const std::vector<ScoringMode>& modes,
                                         const FewShotConfig& fewshot, const std::vector<McqTask>& demo_pool);

struct ModeSelection {
    ScoringMode mode;
    std::vector<McqResult> grid;
};

// Highest dev accuracy over the grid; ties keep the earlier canonical mode.
ModeSelection select_best_mode(arch::Model& model, const data::Tokenizer& tokenizer,
                               const std::vector<McqTask>& dev_tasks, const FewShotConfig& fewshot = {},
                               const std::vector<McqTask>& demo_pool = {});

// Columns: task_id, repeat, predicted, correct, span, length_norm, unconditional_norm.
std::string predictions_csv(const std::vector<McqTask>& tasks, const McqResult& result);

}  // namespace combolab::eval
