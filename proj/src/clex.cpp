// SPDX-License-Identifier: Apache-2.0
#include "finesec/clex.hpp"

#include <algorithm>
#include <array>
#include <unordered_set>

namespace finesec::clex {
namespace {

bool is_ident_start(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$' || c >= 0x80;
}

bool is_ident_char(unsigned char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

constexpr std::array<std::string_view, 27> kMultiPunct = {
    "<<=", ">>=", "->*", "...", "<=>", "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==",
    "!=",  "&&",  "||",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "##", ".*",
};

constexpr std::string_view kSinglePunct = "{}[]()<>;:,.?+-*/%^&|~!=#";

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    LexResult run() {
        while (pos_ < src_.size()) step();
        return std::move(out_);
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    LexResult out_;

    char peek(std::size_t ahead = 0) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }

    void advance() {
        if (src_[pos_] == '\n') ++line_;
        ++pos_;
    }

    void emit(TokenKind kind, std::size_t begin, std::size_t line) {
        out_.tokens.push_back(Token{kind, begin, pos_, line});
    }

    void diag(DiagKind kind, std::size_t line, std::string msg) {
        out_.diagnostics.push_back(Diagnostic{kind, line, std::move(msg)});
    }

    void step() {
        const unsigned char c = static_cast<unsigned char>(peek());
        if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v' || c == '\n') {
            advance();
            return;
        }
        if (c == '\\' && (peek(1) == '\n' || (peek(1) == '\r' && peek(2) == '\n'))) {
            advance();
            return;
        }
        if (c == '/' && peek(1) == '/') return line_comment();
        if (c == '/' && peek(1) == '*') return block_comment();
        if (c == '"') return quoted('"', pos_, line_);
        if (c == '\'') return quoted('\'', pos_, line_);
        if (is_digit(c) || (c == '.' && is_digit(static_cast<unsigned char>(peek(1))))) return number();
        if (is_ident_start(c)) return identifier_or_prefixed_literal();
        punct();
    }

    void line_comment() {
        const std::size_t begin = pos_, line = line_;
        while (pos_ < src_.size()) {
            if (src_[pos_] == '\n') {
                std::size_t back = pos_;
                if (back > begin && src_[back - 1] == '\r') --back;
                if (back > begin && src_[back - 1] == '\\') {
                    advance();
                    continue;
                }
                break;
            }
            advance();
        }
        emit(TokenKind::line_comment, begin, line);
    }

    void block_comment() {
        const std::size_t begin = pos_, line = line_;
        advance();
        advance();
        while (pos_ < src_.size()) {
            if (src_[pos_] == '*' && peek(1) == '/') {
                advance();
                advance();
                emit(TokenKind::block_comment, begin, line);
                return;
            }
            advance();
        }
        diag(DiagKind::unterminated_block_comment, line,
             "unterminated block comment starting at line " + std::to_string(line));
        emit(TokenKind::block_comment, begin, line);
    }

    void quoted(char quote, std::size_t begin, std::size_t line) {
        advance();  // opening quote
        while (pos_ < src_.size()) {
            const char ch = src_[pos_];
            if (ch == '\\' && pos_ + 1 < src_.size()) {
                advance();
                advance();
                continue;
            }
            if (ch == '\n') break;
            advance();
            if (ch == quote) {
                emit(quote == '"' ? TokenKind::string_literal : TokenKind::char_literal, begin, line);
                return;
            }
        }
        if (quote == '"') {
            diag(DiagKind::unterminated_string, line,
                 "unterminated string literal at line " + std::to_string(line));
        } else {
            diag(DiagKind::unterminated_char, line,
                 "unterminated character literal at line " + std::to_string(line));
        }
        emit(quote == '"' ? TokenKind::string_literal : TokenKind::char_literal, begin, line);
    }

    void raw_string(std::size_t begin, std::size_t line) {
        // pos_ is at the opening quote of R"delim( ... )delim"
        advance();
        std::size_t delim_start = pos_;
        while (pos_ < src_.size() && src_[pos_] != '(' && src_[pos_] != '\n' && pos_ - delim_start <= 16) advance();
        if (peek() != '(') {
            diag(DiagKind::unterminated_string, line,
                 "malformed raw string literal at line " + std::to_string(line));
            emit(TokenKind::string_literal, begin, line);
            return;
        }
        const std::string closing = ")" + std::string(src_.substr(delim_start, pos_ - delim_start)) + "\"";
        advance();
        auto found = src_.find(closing, pos_);
        if (found == std::string_view::npos) {
            while (pos_ < src_.size()) advance();
            diag(DiagKind::unterminated_string, line,
                 "unterminated raw string literal at line " + std::to_string(line));
        } else {
            while (pos_ < found + closing.size()) advance();
        }
        emit(TokenKind::string_literal, begin, line);
    }

    void number() {
        const std::size_t begin = pos_, line = line_;
        advance();
        while (pos_ < src_.size()) {
            const unsigned char ch = static_cast<unsigned char>(src_[pos_]);
            if ((ch == '+' || ch == '-') && pos_ > begin) {
                const char prev = src_[pos_ - 1];
                if (prev == 'e' || prev == 'E' || prev == 'p' || prev == 'P') {
                    advance();
                    continue;
                }
                break;
            }
            if (is_ident_char(ch) || ch == '.' ||
                (ch == '\'' && is_ident_char(static_cast<unsigned char>(peek(1))))) {
                advance();
                continue;
            }
            break;
        }
        emit(TokenKind::number, begin, line);
    }

    void identifier_or_prefixed_literal() {
        const std::size_t begin = pos_, line = line_;
        while (pos_ < src_.size() && is_ident_char(static_cast<unsigned char>(src_[pos_]))) advance();
        const std::string_view word = src_.substr(begin, pos_ - begin);
        const char next = peek();
        if (next == '"') {
            if (word == "R" || word == "u8R" || word == "uR" || word == "UR" || word == "LR") {
                raw_string(begin, line);
                return;
            }
            if (word == "u8" || word == "u" || word == "U" || word == "L") {
                quoted('"', begin, line);
                return;
            }
        }
        if (next == '\'' && (word == "u8" || word == "u" || word == "U" || word == "L")) {
            quoted('\'', begin, line);
            return;
        }
        emit(TokenKind::identifier, begin, line);
    }

    void punct() {
        const std::size_t begin = pos_, line = line_;
        for (auto op : kMultiPunct) {
            if (src_.substr(pos_, op.size()) == op) {
                for (std::size_t i = 0; i < op.size(); ++i) advance();
                emit(TokenKind::punct, begin, line);
                return;
            }
        }
        const char ch = src_[pos_];
        if (kSinglePunct.find(ch) != std::string_view::npos) {
            advance();
            emit(TokenKind::punct, begin, line);
            return;
        }
        diag(DiagKind::stray_character, line,
             "stray character 0x" + hex(static_cast<unsigned char>(ch)) + " at line " + std::to_string(line));
        advance();
    }

    static std::string hex(unsigned char c) {
        static constexpr char kHex[] = "0123456789abcdef";
        return {kHex[c >> 4], kHex[c & 0xf]};
    }
};

}  // namespace

LexResult lex(std::string_view src) { return Lexer(src).run(); }

std::vector<Token> code_tokens(const LexResult& lexed) {
    std::vector<Token> out;
    out.reserve(lexed.tokens.size());
    std::copy_if(lexed.tokens.begin(), lexed.tokens.end(), std::back_inserter(out),
                 [](const Token& t) { return !t.is_comment(); });
    return out;
}

std::string_view comment_body(const Token& tok, std::string_view src) {
    auto text = tok.text(src);
    if (tok.kind == TokenKind::line_comment) return text.substr(2);
    if (tok.kind == TokenKind::block_comment) {
        text.remove_prefix(2);
        if (text.size() >= 2 && text.substr(text.size() - 2) == "*/") text.remove_suffix(2);
        return text;
    }
    return text;
}

bool is_keyword(std::string_view ident) {
    static const std::unordered_set<std::string_view> kKeywords = {
        "alignas",   "alignof",   "asm",        "auto",         "bool",      "break",
        "case",      "catch",     "char",       "char8_t",      "char16_t",  "char32_t",
        "class",     "co_await",  "co_return",  "co_yield",     "concept",   "const",
        "consteval", "constexpr", "constinit",  "const_cast",   "continue",  "decltype",
        "default",   "delete",    "do",         "double",       "dynamic_cast", "else",
        "enum",      "explicit",  "export",     "extern",       "false",     "float",
        "for",       "friend",    "goto",       "if",           "inline",    "int",
        "long",      "mutable",   "namespace",  "new",          "noexcept",  "nullptr",
        "operator",  "private",   "protected",  "public",       "register",  "reinterpret_cast",
        "requires",  "restrict",  "return",     "short",        "signed",    "sizeof",
        "static",    "static_assert", "static_cast", "struct",  "switch",    "template",
        "this",      "thread_local", "throw",   "true",         "try",       "typedef",
        "typeid",    "typename",  "union",      "unsigned",     "using",     "virtual",
        "void",      "volatile",  "wchar_t",    "while",        "_Alignas",  "_Alignof",
        "_Atomic",   "_Bool",     "_Complex",   "_Generic",     "_Noreturn", "_Static_assert",
        "_Thread_local", "defined",
    };
    return kKeywords.contains(ident);
}

}  // namespace finesec::clex
