#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace t2t {

/// Word-level tokenizer over the closed caption vocabulary. Text is
/// lowercased, commas become their own token, and unknown words map to UNK.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;

    /// Vocabulary built from every word the caption grammar can emit.
    static const Tokenizer& caption_vocabulary();

    explicit Tokenizer(std::vector<std::string> words);

    int vocab_size() const { return int(words_.size()); }
    const std::string& word(int id) const { return words_.at(std::size_t(id)); }

    /// [BOS, w1, ..., wn, PAD, ...] truncated or padded to `length`.
    std::vector<int> encode(std::string_view text, int length) const;
    /// Inverse of encode for in-vocabulary text; stops at the first PAD.
    std::string decode(const std::vector<int>& ids) const;

    /// Lowercases, splits commas off and collapses whitespace.
    static std::vector<std::string> split_words(std::string_view text);
    static std::string normalize(std::string_view text);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

/// Number of leading tokens before the first PAD (the attended text length).
int text_length(const std::vector<int>& ids, std::size_t offset, int length);

}  // namespace t2t
