// Copyright 2026 The selfdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "selfdistill/tokenizer.hpp"

#include <array>
#include <cctype>

namespace selfdistill::pool {
namespace {

bool is_ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool is_ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

bool is_string_prefix(std::string_view word) {
  if (word.empty() || word.size() > 2) return false;
  for (char c : word) {
    switch (std::tolower(static_cast<unsigned char>(c))) {
      case 'r': case 'b': case 'u': case 'f': break;
      default: return false;
    }
  }
  return true;
}

constexpr std::array<std::string_view, 24> kMultiCharOps = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**",
    "//",  "<<",  ">>",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "@="};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  LexResult run() {
    indents_.push_back(0);
    bool at_line_start = true;
    while (pos_ < text_.size()) {
      if (at_line_start && depth_ == 0) {
        if (!handle_line_start()) break;
        at_line_start = false;
        continue;
      }
      const auto c = static_cast<unsigned char>(text_[pos_]);
      if (c == '\n') {
        ++pos_;
        at_line_start = true;
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
        ++pos_;
        continue;
      }
      if (c == '\\' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n') {
        pos_ += 2;  // explicit line join
        continue;
      }
      if (c == '#') {
        skip_comment();
        continue;
      }
      if (c == '"' || c == '\'') {
        lex_string(pos_);
        continue;
      }
      if (std::isdigit(c) || (c == '.' && pos_ + 1 < text_.size() &&
                              std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
        lex_number();
        continue;
      }
      if (is_ident_start(c)) {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && is_ident_char(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        const std::string_view word = text_.substr(start, pos_ - start);
        if (pos_ < text_.size() && (text_[pos_] == '"' || text_[pos_] == '\'') &&
            is_string_prefix(word)) {
          lex_string(start);
        } else {
          emit(TokenKind::kIdentifier, word);
        }
        continue;
      }
      lex_punct();
    }
    while (indents_.size() > 1) {
      indents_.pop_back();
      emit(TokenKind::kDedent, "DEDENT");
    }
    return std::move(result_);
  }

 private:
  // Measures indentation of the next non-blank, non-comment line and emits
  // INDENT/DEDENT markers. Returns false at end of input.
  bool handle_line_start() {
    while (pos_ < text_.size()) {
      std::size_t col = 0;
      bool saw_space = false;
      bool saw_tab = false;
      std::size_t p = pos_;
      while (p < text_.size() && (text_[p] == ' ' || text_[p] == '\t' || text_[p] == '\f')) {
        if (text_[p] == '\t') {
          col = (col / 8 + 1) * 8;
          saw_tab = true;
        } else if (text_[p] == ' ') {
          ++col;
          saw_space = true;
        }
        ++p;
      }
      if (p >= text_.size()) {
        pos_ = p;
        return false;
      }
      const char c = text_[p];
      if (c == '\n' || c == '\r' || c == '#') {
        pos_ = p;
        if (c == '#') skip_comment();
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
        if (pos_ < text_.size()) ++pos_;
        continue;
      }
      if (saw_space && saw_tab) result_.diagnostics.mixed_indentation = true;
      pos_ = p;
      if (col > indents_.back()) {
        indents_.push_back(col);
        emit(TokenKind::kIndent, "INDENT");
      } else {
        while (col < indents_.back()) {
          indents_.pop_back();
          emit(TokenKind::kDedent, "DEDENT");
        }
        if (col != indents_.back()) {
          result_.diagnostics.inconsistent_dedent = true;
          indents_.push_back(col);
        }
      }
      return true;
    }
    return false;
  }

  void skip_comment() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  // start points at the prefix (if any); pos_ at the opening quote.
  void lex_string(std::size_t start) {
    const char quote = text_[pos_];
    const bool triple = pos_ + 2 < text_.size() && text_[pos_ + 1] == quote && text_[pos_ + 2] == quote;
    pos_ += triple ? 3 : 1;
    bool closed = false;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\\') {
        pos_ += 2;
        continue;
      }
      if (!triple && c == '\n') break;
      if (c == quote) {
        if (!triple) {
          ++pos_;
          closed = true;
          break;
        }
        if (pos_ + 2 < text_.size() && text_[pos_ + 1] == quote && text_[pos_ + 2] == quote) {
          pos_ += 3;
          closed = true;
          break;
        }
      }
      ++pos_;
    }
    if (pos_ > text_.size()) pos_ = text_.size();
    if (!closed) result_.diagnostics.unterminated_string = true;
    emit(TokenKind::kString, text_.substr(start, pos_ - start));
  }

  void lex_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const auto c = static_cast<unsigned char>(text_[pos_]);
      if (std::isalnum(c) || c == '_' || c == '.') {
        ++pos_;
      } else if ((c == '+' || c == '-') && pos_ > start &&
                 (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E') &&
                 !(text_.size() > start + 1 && (text_[start + 1] == 'x' || text_[start + 1] == 'X'))) {
        ++pos_;
      } else {
        break;
      }
    }
    emit(TokenKind::kNumber, text_.substr(start, pos_ - start));
  }

  void lex_punct() {
    for (std::string_view op : kMultiCharOps) {
      if (text_.substr(pos_, op.size()) == op) {
        pos_ += op.size();
        emit(TokenKind::kOperator, op);
        return;
      }
    }
    const char c = text_[pos_++];
    switch (c) {
      case '(': case '[': case '{':
        ++depth_;
        emit(TokenKind::kDelimiter, std::string_view(&c, 1));
        return;
      case ')': case ']': case '}':
        if (depth_ > 0) --depth_;
        emit(TokenKind::kDelimiter, std::string_view(&c, 1));
        return;
      case ',': case ':': case ';': case '.': case '@':
        emit(TokenKind::kDelimiter, std::string_view(&c, 1));
        return;
      default:
        emit(TokenKind::kOperator, std::string_view(&c, 1));
        return;
    }
  }

  void emit(TokenKind kind, std::string_view text) { result_.tokens.push_back({kind, std::string(text)}); }

  std::string_view text_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  std::vector<std::size_t> indents_;
  LexResult result_;
};

}  // namespace

LexResult lex_code(std::string_view text) { return Lexer(text).run(); }

std::ostream& operator<<(std::ostream& os, const Token& t) {
  return os << static_cast<char>(t.kind) << ':' << t.text;
}

std::string render_tokens(const std::vector<Token>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

}  // namespace selfdistill::pool
