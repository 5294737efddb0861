#pragma once

// Built-in copies of data/palette.tsv and data/classed_labels.tsv.
// tests/unit/notation_test.cpp asserts they stay byte-identical to the files.

#include <string_view>

namespace chordgen::data {

inline constexpr std::string_view kPaletteTsv = R"tsv(# Canonical chord-quality palette. One quality per line:
# quality_id<TAB>semitone offsets above the root<TAB>render suffix
# Line order is the palette index; containment ties resolve to the lower index.
version	palette-v1
maj	0,4,7	
min	0,3,7	m
dom7	0,4,7,10	7
maj7	0,4,7,11	maj7
min7	0,3,7,10	m7
maj9	0,4,7,11,14	maj9
m11	0,3,7,10,14,17	m11
13	0,4,7,10,14,21	13
13#11	0,4,7,10,14,18,21	13#11
mMaj7	0,3,7,11	mMaj7
dim7	0,3,6,9	dim7
sus2	0,2,7	sus2
sus4	0,5,7	sus4
6	0,4,7,9	6
m6	0,3,7,9	m6
9	0,4,7,10,14	9
m9	0,3,7,10,14	m9
aug	0,4,8	aug
dim	0,3,6	dim
halfdim7	0,3,6,10	m7b5
add9	0,4,7,14	add9
7sus4	0,5,7,10	7sus4
maj13	0,4,7,11,14,21	maj13
m13	0,3,7,10,14,21	m13
7b9	0,4,7,10,13	7b9
7#9	0,4,7,10,15	7#9
)tsv";

inline constexpr std::string_view kClassedLabelsTsv = R"tsv(# Chord-class labels accepted by the `classed` dialect (root:label[/bass]).
# label<TAB>palette quality_id
version	classed-v1
maj	maj
min	min
7	dom7
maj7	maj7
min7	min7
maj9	maj9
min9	m9
min11	m11
9	9
13	13
13#11	13#11
maj13	maj13
min13	m13
minmaj7	mMaj7
dim7	dim7
dim	dim
hdim7	halfdim7
aug	aug
sus2	sus2
sus4	sus4
7sus4	7sus4
maj6	6
min6	m6
add9	add9
7b9	7b9
7#9	7#9
j7	maj7
-7	min7
-	min
m7b5	halfdim7
o7	dim7
o	dim
+	aug
6	6
-6	m6
j79	maj9
-79	m9
-7911	m11
79	9
7913	13
79b	7b9
79#	7#9
-j7	mMaj7
sus	sus4
7sus	7sus4
)tsv";

}  // namespace chordgen::data
