//! Byte-level tokenizer with a handful of reserved ids.
//!
//! Ids `0..256` are raw UTF-8 bytes; the reserved ids follow.

use crate::error::{CoreError, Result};

pub type TokenId = u32;

pub const BYTE_VOCAB: usize = 256;
pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const IMAGE_START: TokenId = 258;
pub const IMAGE_END: TokenId = 259;
pub const PAD: TokenId = 260;
/// Placeholder id at positions that carry an image embedding.
pub const SLOT: TokenId = 261;
pub const UNK: TokenId = 262;
pub const VOCAB_SIZE: usize = 263;

pub fn is_special(id: TokenId) -> bool {
    (id as usize) >= BYTE_VOCAB
}

/// Display name of a token, for logs and debugging.
pub fn token_name(id: TokenId) -> String {
    match id {
        BOS => "<s>".into(),
        EOS => "</s>".into(),
        IMAGE_START => "<image>".into(),
        IMAGE_END => "</image>".into(),
        PAD => "<pad>".into(),
        SLOT => "<slot>".into(),
        UNK => "<unk>".into(),
        b if (b as usize) < BYTE_VOCAB => format!("{:?}", b as u8 as char),
        other => format!("<{other}?>"),
    }
}

pub fn tokenize(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

pub fn detokenize(ids: &[TokenId]) -> Result<String> {
    let bytes = to_bytes(ids)?;
    String::from_utf8(bytes).map_err(|_| CoreError::InvalidUtf8)
}

/// Like [`detokenize`] but replaces invalid UTF-8 sequences; model output
/// is arbitrary bytes.
pub fn detokenize_lossy(ids: &[TokenId]) -> Result<String> {
    Ok(String::from_utf8_lossy(&to_bytes(ids)?).into_owned())
}

fn to_bytes(ids: &[TokenId]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&id| match id {
            b if (b as usize) < BYTE_VOCAB => Ok(b as u8),
            r if (r as usize) < VOCAB_SIZE => Err(CoreError::ReservedToken(r)),
            other => Err(CoreError::TokenOutOfRange {
                id: other,
                vocab: VOCAB_SIZE,
            }),
        })
        .collect()
}
