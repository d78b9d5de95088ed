//! Reader for version 5 transport files: fixed 80-byte card images, header
//! records announcing each section, 140-byte variable descriptors, then raw
//! observation records padded with blanks to a card boundary.

use super::{RawMember, VariableDescriptor, VariableKind, XportError};

pub const CARD: usize = 80;

const LIBRARY_PREFIX: &[u8] = b"HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!";
const LIBV8_PREFIX: &[u8] = b"HEADER RECORD*******LIBV8   HEADER RECORD!!!!!!!";
const MEMBER_PREFIX: &[u8] = b"HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!";
const DSCRPTR_PREFIX: &[u8] = b"HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!";
const NAMESTR_PREFIX: &[u8] = b"HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!";
const OBS_PREFIX: &[u8] = b"HEADER RECORD*******OBS     HEADER RECORD!!!!!!!";

/// Sequential card reader over the in-memory file image.
struct Cards<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cards<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cards { data, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<&'a [u8], XportError> {
        let card = self.peek(what)?;
        self.pos += CARD;
        Ok(card)
    }

    fn peek(&self, what: &str) -> Result<&'a [u8], XportError> {
        if self.pos + CARD > self.data.len() {
            return Err(XportError::TruncatedFile(format!(
                "expected {what} at byte {}, file ends at {}",
                self.pos,
                self.data.len()
            )));
        }
        Ok(&self.data[self.pos..self.pos + CARD])
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], XportError> {
        if self.pos + n > self.data.len() {
            return Err(XportError::TruncatedFile(format!(
                "expected {n} bytes of {what} at byte {}, file ends at {}",
                self.pos,
                self.data.len()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn exhausted(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn ascii_field(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim().to_string()
}

fn parse_count(bytes: &[u8], what: &str) -> Result<usize, XportError> {
    let text = ascii_field(bytes);
    text.parse().map_err(|_| {
        XportError::MalformedHeader(format!("{what} field {text:?} is not a number"))
    })
}

fn be_u16(bytes: &[u8]) -> u16 {
    u16::from_be_bytes([bytes[0], bytes[1]])
}

fn be_u32(bytes: &[u8]) -> u32 {
    u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
}

/// Parses one 140-byte variable descriptor entry.
fn parse_namestr(entry: &[u8]) -> Result<(VariableDescriptor, u16), XportError> {
    let ntype = be_u16(&entry[0..2]);
    let kind = match ntype {
        1 => VariableKind::Numeric,
        2 => VariableKind::Character,
        other => {
            return Err(XportError::InconsistentNamestr(format!(
                "variable type {other} is neither numeric (1) nor character (2)"
            )))
        }
    };
    let length = be_u16(&entry[4..6]) as usize;
    let varnum = be_u16(&entry[6..8]);
    let name = ascii_field(&entry[8..16]);
    let label = ascii_field(&entry[16..56]);
    let position = be_u32(&entry[84..88]) as usize;

    match kind {
        VariableKind::Numeric if !(2..=8).contains(&length) => {
            return Err(XportError::InconsistentNamestr(format!(
                "numeric variable {name} has storage length {length}, expected 2..=8"
            )))
        }
        VariableKind::Character if length == 0 || length > 200 => {
            return Err(XportError::InconsistentNamestr(format!(
                "character variable {name} has storage length {length}, expected 1..=200"
            )))
        }
        _ => {}
    }
    if name.is_empty() {
        return Err(XportError::InconsistentNamestr(
            "variable with empty name".to_string(),
        ));
    }

    Ok((
        VariableDescriptor {
            name,
            label,
            kind,
            length,
            position,
        },
        varnum,
    ))
}

fn parse_member(cards: &mut Cards) -> Result<RawMember, XportError> {
    let member_card = cards.next("member header")?;
    if !member_card.starts_with(MEMBER_PREFIX) {
        return Err(XportError::MalformedHeader(format!(
            "expected member header, found {:?}",
            ascii_field(&member_card[..40])
        )));
    }
    let namestr_len = parse_count(&member_card[75..78], "descriptor size")?;
    if namestr_len != 140 && namestr_len != 136 {
        return Err(XportError::MalformedHeader(format!(
            "descriptor entries of {namestr_len} bytes are not supported"
        )));
    }

    let dscrptr = cards.next("member descriptor header")?;
    if !dscrptr.starts_with(DSCRPTR_PREFIX) {
        return Err(XportError::MalformedHeader(
            "member header not followed by descriptor header".to_string(),
        ));
    }
    // Two real header cards: dataset name + type, then modification timestamp.
    let data_card = cards.next("member data header")?;
    let member_name = ascii_field(&data_card[8..16]);
    cards.next("member timestamp header")?;

    let namestr_card = cards.next("variable count header")?;
    if !namestr_card.starts_with(NAMESTR_PREFIX) {
        return Err(XportError::MalformedHeader(
            "expected variable count header".to_string(),
        ));
    }
    let n_vars = parse_count(&namestr_card[54..58], "variable count")?;
    if n_vars == 0 {
        return Err(XportError::InconsistentNamestr(format!(
            "member {member_name} declares zero variables"
        )));
    }

    let block = n_vars * namestr_len;
    let padded = block.div_ceil(CARD) * CARD;
    let entries = cards.take(padded, "variable descriptors")?;
    let mut variables = Vec::with_capacity(n_vars);
    for i in 0..n_vars {
        let entry = &entries[i * namestr_len..i * namestr_len + namestr_len];
        variables.push(parse_namestr(entry)?);
    }
    variables.sort_by_key(|&(_, varnum)| varnum);
    let variables: Vec<VariableDescriptor> =
        variables.into_iter().map(|(v, _)| v).collect();

    // Descriptors must tile the record: ascending positions, no gaps.
    let mut offset = 0usize;
    for v in &variables {
        if v.position != offset {
            return Err(XportError::InconsistentNamestr(format!(
                "variable {} starts at byte {}, expected {}",
                v.name, v.position, offset
            )));
        }
        offset += v.length;
    }
    let record_len = offset;
    for (i, a) in variables.iter().enumerate() {
        if variables[i + 1..].iter().any(|b| b.name == a.name) {
            return Err(XportError::InconsistentNamestr(format!(
                "duplicate variable name {}",
                a.name
            )));
        }
    }

    let obs_card = cards.next("observation header")?;
    if !obs_card.starts_with(OBS_PREFIX) {
        return Err(XportError::MalformedHeader(
            "expected observation header after variable descriptors".to_string(),
        ));
    }

    // The data region runs to the next member header or end of file, in
    // whole cards.
    let start = cards.pos;
    let mut end = start;
    while end + CARD <= cards.data.len() {
        if cards.data[end..].starts_with(MEMBER_PREFIX) {
            break;
        }
        end += CARD;
    }
    if end + CARD > cards.data.len() && end < cards.data.len() {
        return Err(XportError::TruncatedFile(format!(
            "data region ends mid-card at byte {}",
            cards.data.len()
        )));
    }
    cards.pos = end;

    let region = &cards.data[start..end];
    let region_len = region.len();
    let mut n_obs = region_len / record_len;
    let remainder = &region[n_obs * record_len..];
    if !remainder.iter().all(|&b| b == b' ') {
        return Err(XportError::TruncatedFile(format!(
            "member {member_name} ends mid-record ({} stray bytes)",
            remainder.len()
        )));
    }
    // Trailing all-blank records are card padding only while the implied pad
    // stays shorter than one card; an all-blank record before that boundary
    // is a real observation.
    while n_obs > 0 {
        let rec = &region[(n_obs - 1) * record_len..n_obs * record_len];
        if region_len - (n_obs - 1) * record_len < CARD && rec.iter().all(|&b| b == b' ') {
            n_obs -= 1;
        } else {
            break;
        }
    }

    let observations = (0..n_obs)
        .map(|i| region[i * record_len..(i + 1) * record_len].to_vec())
        .collect();

    Ok(RawMember {
        name: member_name,
        variables,
        observations,
    })
}

/// Parses a complete transport file image into its members.
pub fn parse_xport_bytes(data: &[u8]) -> Result<Vec<RawMember>, XportError> {
    let mut cards = Cards::new(data);
    let library = cards.next("library header")?;
    if library.starts_with(LIBV8_PREFIX) {
        return Err(XportError::MalformedHeader(
            "version 8/9 transport files are not supported, export as version 5".to_string(),
        ));
    }
    if !library.starts_with(LIBRARY_PREFIX) {
        return Err(XportError::MalformedHeader(
            "file does not start with a transport library header".to_string(),
        ));
    }
    // Two real header cards follow the library record.
    cards.next("library sas header")?;
    cards.next("library timestamp header")?;

    let mut members = Vec::new();
    loop {
        members.push(parse_member(&mut cards)?);
        if cards.exhausted() {
            break;
        }
    }
    Ok(members)
}

/// Parses a transport stream, buffering it fully first.
pub fn parse_xport<R: std::io::Read>(mut reader: R) -> Result<Vec<RawMember>, XportError> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    parse_xport_bytes(&data)
}
