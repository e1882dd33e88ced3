#include <doctest.h>

#include "t2t/caption.hpp"
#include "t2t/tokenizer.hpp"

using namespace t2t;

TEST_CASE("empty text encodes to BOS then padding") {
    const auto& tok = Tokenizer::caption_vocabulary();
    const auto ids = tok.encode("", 8);
    CHECK(ids == std::vector<int>{Tokenizer::kBos, 0, 0, 0, 0, 0, 0, 0});
    CHECK(text_length(ids, 0, 8) == 1);
}

TEST_CASE("generated captions have no unknown tokens and round trip") {
    const auto& tok = Tokenizer::caption_vocabulary();
    CorpusConfig cfg;
    for (std::size_t i = 0; i < 300; ++i) {
        const SceneLayout l = generate_layout(record_seed(4, i), cfg);
        std::vector<std::string> caps{build_global_caption(l)};
        for (const auto& o : l.objects) caps.push_back(build_object_caption(o, l.width, l.height));
        for (const auto& c : caps) {
            const auto ids = tok.encode(c, 32);
            REQUIRE(ids.size() == 32);
            for (int id : ids) REQUIRE(id != Tokenizer::kUnk);
            REQUIRE(text_length(ids, 0, 32) < 32);
            CHECK(tok.decode(ids) == Tokenizer::normalize(c));
        }
    }
}

TEST_CASE("all grammar words are in the vocabulary") {
    const auto& tok = Tokenizer::caption_vocabulary();
    for (ObjectClass c : kAllClasses)
        for (int col = 0; col < 3; ++col)
            for (int band = 0; band < 3; ++band)
                for (Color color : kAllColors) {
                    const auto ids = tok.encode(
                        render_object_caption(c, color, {static_cast<Column>(col), static_cast<Band>(band)}), 32);
                    for (int id : ids) REQUIRE(id != Tokenizer::kUnk);
                }
    GlobalCaptionSlots s;
    for (ObjectClass c : kAllClasses) s.counts[c] = 8;
    for (int id : tok.encode(render_global_caption(s), 64)) CHECK(id != Tokenizer::kUnk);
}

TEST_CASE("unknown words map to UNK and long text truncates") {
    const auto& tok = Tokenizer::caption_vocabulary();
    const auto ids = tok.encode("a flying saucer", 6);
    CHECK(ids[2] == Tokenizer::kUnk);
    const auto t = tok.encode("a car a car a car a car", 4);
    CHECK(t.size() == 4);
    CHECK(text_length(t, 0, 4) == 4);
}

TEST_CASE("normalization lowercases and splits commas") {
    CHECK(Tokenizer::split_words("Two  Cars,A cone") == std::vector<std::string>{"two", "cars", ",", "a", "cone"});
    CHECK(Tokenizer::normalize("  Clear URBAN scene ,with  ") == "clear urban scene, with");
}
