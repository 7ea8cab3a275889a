//! Shared inputs for the criterion benches.

use delpath_core::RootSentence;

pub const SENTENCES: &[&str] = &[
    "i think america is still a fairly crowded country by the way .",
    "i work work at a company .",
    "she sings with me .",
    "the committee said on tuesday that it would not approve the proposed merger between the two largest banks in the region .",
];

pub fn roots() -> Vec<RootSentence> {
    SENTENCES
        .iter()
        .enumerate()
        .map(|(i, s)| RootSentence::from_text(i.to_string(), s, true).expect("non-empty"))
        .collect()
}
