#pragma once

#include "driftlab/rng.hpp"
#include "driftlab/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace driftlab::world {

// Token id layout. The low ids are reserved; everything from content_begin()
// up is generic content vocabulary driven by the Markov source.
struct Vocab {
    int size = 64;
    int n_triggers = 4;
    int n_harm = 4;
    int n_answers = 10;

    static constexpr TokenId PAD = 0;
    static constexpr TokenId BOS = 1;
    static constexpr TokenId REFUSE = 2;
    static constexpr TokenId GO = 3;

    TokenId trigger(int i) const { return static_cast<TokenId>(4 + i); }
    TokenId harm(int i) const { return static_cast<TokenId>(4 + n_triggers + i); }
    TokenId marker_copy() const { return static_cast<TokenId>(4 + n_triggers + n_harm); }
    TokenId marker_arith() const { return marker_copy() + 1; }
    TokenId marker_classify() const { return marker_copy() + 2; }
    TokenId marker_qa() const { return marker_copy() + 3; }
    TokenId answer(int d) const { return marker_copy() + 4 + static_cast<TokenId>(d); }
    TokenId content_begin() const { return answer(n_answers); }
    int n_content() const { return size - content_begin(); }

    bool is_trigger(TokenId t) const { return t >= trigger(0) && t < trigger(n_triggers); }
    bool is_content(TokenId t) const { return t >= content_begin() && t < size; }
};

// One token sequence split into prompt and target spans. The target span is
// everything from prompt_len to the end.
struct Sample {
    std::vector<TokenId> tokens;
    int prompt_len = 0;
    std::string task;
    int index = 0;

    int target_len() const { return static_cast<int>(tokens.size()) - prompt_len; }
    std::vector<TokenId> prompt() const {
        return {tokens.begin(), tokens.begin() + prompt_len};
    }
    std::vector<TokenId> target() const {
        return {tokens.begin() + prompt_len, tokens.end()};
    }
};

void validate(const Sample& s, int context_len);

enum class TaskKind { copy_long, arith_mod, classify_short, qa_short };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::copy_long;
    int n_train = 0;
    int n_eval = 0;
    int answer_len = 0;
};

void validate(const TaskSpec& spec);

struct Dataset {
    std::vector<Sample> samples;
    std::uint64_t seed = 0;
};

// The synthetic world: a seeded order-1 Markov source over content tokens,
// trigger-keyed harmful continuations, refusal data, attack prompts, and the
// four task families. Every generator is a pure function of (this, args).
class World {
public:
    World(int vocab_size, int context_len, std::uint64_t seed);

    const Vocab& vocab() const { return vocab_; }
    int context_len() const { return context_len_; }
    std::uint64_t seed() const { return seed_; }

    // Pretraining mixture: `harmful_rate` of samples pair a trigger-prefixed
    // prompt with a harmful continuation; the rest are Markov sequences.
    Dataset gen_pretrain(int n, double harmful_rate, std::uint64_t seed) const;

    // Refusal data: trigger prompt -> REFUSE. Prompt content is drawn from
    // the even half of the content alphabet, attack prompts from the odd
    // half, so the two sets can never collide.
    Dataset gen_alignment(int n, std::uint64_t seed) const;

    std::vector<std::vector<TokenId>> gen_attack_set(int n, std::uint64_t seed) const;

    // Task data; train and eval are disjoint under token-sequence equality.
    // Eval scoring is exact match of the target span under greedy decode.
    std::pair<Dataset, Dataset> gen_task(const TaskSpec& spec, std::uint64_t seed) const;

    // Markov walk over content tokens. start_parity 0/1 restricts the first
    // token to the even/odd half of the content alphabet; -1 means any.
    std::vector<TokenId> markov_walk(Rng& rng, int len, int start_parity = -1) const;

    int classify_class_of(TokenId content_token) const;
    int qa_digit_of(TokenId content_token) const;
    int n_classes() const { return 4; }

private:
    std::vector<TokenId> trigger_prompt(Rng& rng, int parity) const;

    Vocab vocab_;
    int context_len_;
    std::uint64_t seed_;
    // markov_[i] = successor candidates (4) of content token i, with fixed
    // weights {0.6, 0.2, 0.12, 0.08}.
    std::vector<std::array<TokenId, 4>> markov_;
    std::vector<int> class_of_;  // content index -> class id
    std::vector<int> qa_digit_;  // content index -> answer digit
};

// `index<TAB>prompt_len<TAB>space-separated token ids<TAB>task tag` records.
std::string serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(const std::string& text);

} // namespace driftlab::world
