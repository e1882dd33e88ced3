#include "t2t/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

#include "t2t/caption.hpp"

namespace t2t {

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            flush();
        } else if (ch == ',') {
            flush();
            words.emplace_back(",");
        } else {
            current += char(std::tolower(uc));
        }
    }
    flush();
    return words;
}

std::string Tokenizer::normalize(std::string_view text) {
    std::string out;
    for (const auto& w : split_words(text)) {
        if (!out.empty() && w != ",") out += ' ';
        out += w;
    }
    return out;
}

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], int(i)).second) throw std::invalid_argument("Tokenizer: duplicate word");
    }
}

const Tokenizer& Tokenizer::caption_vocabulary() {
    static const Tokenizer tok = [] {
        std::set<std::string> vocab;
        auto add_text = [&](const std::string& s) {
            for (auto& w : split_words(s)) vocab.insert(w);
        };
        for (ObjectClass c : kAllClasses) {
            add_text(class_phrase(c));
            add_text(class_plural(c));
        }
        for (Color c : kAllColors) add_text(to_string(c));
        for (int col = 0; col < 3; ++col)
            for (int band = 0; band < 3; ++band)
                add_text(render_object_caption(ObjectClass::car, std::nullopt,
                                               {static_cast<Column>(col), static_cast<Band>(band)}));
        for (int w = 0; w < 4; ++w)
            for (int r = 0; r < 4; ++r)
                for (int v = 0; v < 2; ++v) {
                    GlobalCaptionSlots slots;
                    slots.weather = static_cast<Weather>(w);
                    slots.road_type = static_cast<RoadType>(r);
                    slots.view = static_cast<View>(v);
                    add_text(render_global_caption(slots));
                }
        for (int n = 2; n <= 8; ++n) vocab.insert(std::to_string(n));
        add_text("a an and");
        std::vector<std::string> words = {"<pad>", "<unk>", "<bos>"};
        words.insert(words.end(), vocab.begin(), vocab.end());
        return Tokenizer(std::move(words));
    }();
    return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text, int length) const {
    if (length < 1) throw std::invalid_argument("Tokenizer::encode: length must be >= 1");
    std::vector<int> ids(std::size_t(length), kPad);
    ids[0] = kBos;
    std::size_t pos = 1;
    for (const auto& w : split_words(text)) {
        if (pos >= ids.size()) break;
        const auto it = index_.find(w);
        ids[pos++] = it == index_.end() ? kUnk : it->second;
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad) break;
        if (id == kBos) continue;
        const std::string& w = id >= 0 && id < vocab_size() ? words_[std::size_t(id)] : words_[kUnk];
        if (!out.empty() && w != ",") out += ' ';
        out += w;
    }
    return out;
}

int text_length(const std::vector<int>& ids, std::size_t offset, int length) {
    for (int i = 0; i < length; ++i)
        if (ids[offset + std::size_t(i)] == Tokenizer::kPad) return i;
    return length;
}

}  // namespace t2t
