// SPDX-License-Identifier: Apache-2.0
//
// A forgiving C/C++ lexer. It understands enough of the language to tell
// code from comments and literals, which is all the preprocessing and
// snippet-validation steps need. It never aborts: problems are collected as
// diagnostics so callers can decide which ones are fatal.
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace finesec::clex {

enum class TokenKind {
    identifier,
    number,
    string_literal,
    char_literal,
    punct,
    line_comment,
    block_comment,
};

struct Token {
    TokenKind kind;
    std::size_t begin;  // byte offset into the source
    std::size_t end;    // one past the last byte
    std::size_t line;   // 1-based line of `begin`

    std::string_view text(std::string_view src) const { return src.substr(begin, end - begin); }
    bool is_comment() const {
        return kind == TokenKind::line_comment || kind == TokenKind::block_comment;
    }
};

enum class DiagKind {
    unterminated_block_comment,
    unterminated_string,
    unterminated_char,
    stray_character,
};

struct Diagnostic {
    DiagKind kind;
    std::size_t line;
    std::string message;
};

struct LexResult {
    std::vector<Token> tokens;
    std::vector<Diagnostic> diagnostics;

    bool ok() const { return diagnostics.empty(); }
};

LexResult lex(std::string_view src);

/// Code tokens only (comments dropped), in source order.
std::vector<Token> code_tokens(const LexResult& lexed);

/// Body text of a comment without its delimiters.
std::string_view comment_body(const Token& tok, std::string_view src);

bool is_keyword(std::string_view ident);

}  // namespace finesec::clex
