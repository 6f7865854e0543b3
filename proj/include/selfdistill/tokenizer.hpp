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

#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace selfdistill::pool {

enum class TokenKind : char {
  kIdentifier = 'I',  // names and keywords
  kNumber = 'N',
  kString = 'S',
  kOperator = 'O',
  kDelimiter = 'D',   // ( ) [ ] { } , : ; . @
  kIndent = '>',
  kDedent = '<',
};

struct Token {
  TokenKind kind;
  std::string text;

  bool operator==(const Token&) const = default;
};

std::ostream& operator<<(std::ostream& os, const Token& t);

struct LexDiagnostics {
  bool unterminated_string = false;
  // A dedent landed on a column that no enclosing block opened.
  bool inconsistent_dedent = false;
  // Some line mixes tabs and spaces in its leading whitespace.
  bool mixed_indentation = false;
};

struct LexResult {
  std::vector<Token> tokens;
  LexDiagnostics diagnostics;
};

// Python-flavoured lexer. Whitespace, newlines and comments produce no
// tokens; changes of indentation at the start of a logical line produce
// INDENT/DEDENT markers. Newlines inside brackets do not start a new logical
// line. The lexer is total: any byte string yields some token sequence.
LexResult lex_code(std::string_view text);

inline std::vector<Token> tokenize_code(std::string_view text) { return lex_code(text).tokens; }

// Compact printable rendering, e.g. "def f ( ) : INDENT return 1 DEDENT".
std::string render_tokens(const std::vector<Token>& tokens);

}  // namespace selfdistill::pool
